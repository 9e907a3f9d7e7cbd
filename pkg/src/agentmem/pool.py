"""Growable numpy-backed vector pools shared by cache levels and staging.

Scopes are interned to small integer codes (one shared table per store) so
scope filtering during scans stays a vectorized mask. Two removal modes:
ordered pools shift rows down (preserves FIFO for L0 recency), unordered
pools swap with the last row.
"""

from __future__ import annotations

import numpy as np


class ScopeCodes:
    """Store-wide scope -> small int interning table."""

    def __init__(self):
        self.code: dict[str, int] = {}
        self.name: list[str] = []

    def intern(self, scope: str) -> int:
        c = self.code.get(scope)
        if c is None:
            c = len(self.name)
            self.code[scope] = c
            self.name.append(scope)
        return c

    def mask_codes(self, scopes) -> np.ndarray:
        return np.asarray(sorted(self.intern(s) for s in scopes), dtype=np.int16)


class VectorPool:
    """(id, vector, scope, staged) rows with vectorized scanning."""

    def __init__(self, dimension: int, ordered: bool = False):
        self.dimension = dimension
        self.ordered = ordered
        cap = 8
        self._mat = np.zeros((cap, dimension), dtype=np.float32)
        self._ids = np.zeros(cap, dtype=np.int64)
        self._scopes = np.zeros(cap, dtype=np.int16)
        self._staged = np.zeros(cap, dtype=bool)
        self.n = 0
        self._rows: dict[int, int] = {}

    def __len__(self):
        return self.n

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._rows

    @property
    def vectors(self) -> np.ndarray:
        return self._mat[: self.n]

    @property
    def ids(self) -> np.ndarray:
        return self._ids[: self.n]

    @property
    def scopes(self) -> np.ndarray:
        return self._scopes[: self.n]

    @property
    def staged(self) -> np.ndarray:
        return self._staged[: self.n]

    def staged_flag(self, item_id: int) -> bool | None:
        row = self._rows.get(item_id)
        return bool(self._staged[row]) if row is not None else None

    def _grow(self, needed: int):
        cap = self._mat.shape[0]
        if needed <= cap:
            return
        new_cap = max(cap * 2, needed)
        for name, width in (("_mat", self.dimension), ("_ids", 0), ("_scopes", 0), ("_staged", 0)):
            old = getattr(self, name)
            arr = np.zeros((new_cap, width) if width else new_cap, dtype=old.dtype)
            arr[: self.n] = old[: self.n]
            setattr(self, name, arr)

    def add(self, item_id: int, vector: np.ndarray, scope_code: int, staged: bool) -> bool:
        if item_id in self._rows:
            return False
        self._grow(self.n + 1)
        row = self.n
        self._mat[row] = vector
        self._ids[row] = item_id
        self._scopes[row] = scope_code
        self._staged[row] = staged
        self._rows[item_id] = row
        self.n += 1
        return True

    def set_staged(self, item_id: int, staged: bool):
        row = self._rows.get(item_id)
        if row is not None:
            self._staged[row] = staged

    def remove(self, item_id: int) -> bool:
        row = self._rows.pop(item_id, None)
        if row is None:
            return False
        last = self.n - 1
        if self.ordered:
            if row != last:
                self._mat[row:last] = self._mat[row + 1 : self.n]
                self._ids[row:last] = self._ids[row + 1 : self.n]
                self._scopes[row:last] = self._scopes[row + 1 : self.n]
                self._staged[row:last] = self._staged[row + 1 : self.n]
                for i in range(row, last):
                    self._rows[int(self._ids[i])] = i
        elif row != last:
            self._mat[row] = self._mat[last]
            self._ids[row] = self._ids[last]
            self._scopes[row] = self._scopes[last]
            self._staged[row] = self._staged[last]
            self._rows[int(self._ids[row])] = row
        self.n -= 1
        return True

    def pop_front(self) -> tuple[int, np.ndarray, int, bool]:
        item = (
            int(self._ids[0]),
            self._mat[0].copy(),
            int(self._scopes[0]),
            bool(self._staged[0]),
        )
        self.remove(item[0])
        return item

    def rows(self):
        for i in range(self.n):
            yield (
                int(self._ids[i]),
                self._mat[i],
                int(self._scopes[i]),
                bool(self._staged[i]),
            )

    def scope_mask(self, codes: np.ndarray) -> np.ndarray:
        return np.isin(self._scopes[: self.n], codes)
