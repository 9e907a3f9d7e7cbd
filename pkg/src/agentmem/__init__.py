"""agentmem: dynamic multi-scope ANN memory store for LLM-agent workloads."""

from .core import (
    STATIC_SCOPE,
    MemoryItem,
    Metric,
    ParseError,
    ScopePermissionError,
    UsageError,
    VersionMismatchError,
)
from .engine import SearchResult, Store, StoreConfig

__all__ = [
    "STATIC_SCOPE",
    "MemoryItem",
    "Metric",
    "ParseError",
    "ScopePermissionError",
    "SearchResult",
    "Store",
    "StoreConfig",
    "UsageError",
    "VersionMismatchError",
]

__version__ = "0.1.0"
