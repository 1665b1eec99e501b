"""
Annotated numpy array types for pydantic models.
Arrays are copied to float64 and made read-only on validation; they serialize as nested lists.
"""
from typing import Annotated, Any

import numpy as np
from pydantic import BeforeValidator, PlainSerializer


def _frozen(value: Any, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("array entries must be finite")
    arr.flags.writeable = False
    return arr


def _as_vector(value: Any) -> np.ndarray:
    return _frozen(value, 1)


def _as_matrix(value: Any) -> np.ndarray:
    return _frozen(value, 2)


def _to_list(arr: np.ndarray) -> list:
    return arr.tolist()


Vector = Annotated[np.ndarray, BeforeValidator(_as_vector), PlainSerializer(_to_list, return_type=list)]
Matrix = Annotated[np.ndarray, BeforeValidator(_as_matrix), PlainSerializer(_to_list, return_type=list)]
