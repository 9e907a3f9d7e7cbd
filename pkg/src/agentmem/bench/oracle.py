"""Brute-force ground truth over the exact live set at any trace position."""

from __future__ import annotations

import numpy as np

from ..core import Metric, batch_distances
from ..pool import ScopeCodes, VectorPool


class StreamingOracle:
    """Applies trace mutations to a flat list; answers exact top-k."""

    def __init__(self, dimension: int, metric: Metric = Metric.SQUARED_EUCLIDEAN):
        self.dimension = dimension
        self.metric = metric
        self.codes = ScopeCodes()
        self.pool = VectorPool(dimension, ordered=False)

    def insert(self, item_id: int, vector: np.ndarray, scope: str):
        self.pool.add(item_id, np.asarray(vector, dtype=np.float32), self.codes.intern(scope), False)

    def delete(self, item_id: int) -> bool:
        return self.pool.remove(item_id)

    def update(self, item_id: int, vector: np.ndarray, scope: str):
        self.pool.remove(item_id)
        self.insert(item_id, vector, scope)

    def __len__(self):
        return len(self.pool)

    def topk(self, q: np.ndarray, k: int, scopes) -> list[tuple[int, float]]:
        if len(self.pool) == 0:
            return []
        mask = self.pool.scope_mask(self.codes.mask_codes(scopes))
        if not mask.any():
            return []
        ids = self.pool.ids[mask]
        d = batch_distances(np.asarray(q, dtype=np.float32), self.pool.vectors[mask], self.metric)
        order = np.lexsort((ids, d))[:k]
        return [(int(ids[i]), float(d[i])) for i in order]
