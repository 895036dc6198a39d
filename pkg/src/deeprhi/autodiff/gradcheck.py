from __future__ import annotations

from typing import Callable

import numpy as np

from .graph import NonFiniteError


def finite_diff_jacobian(
    fn: Callable[[np.ndarray], np.ndarray], point: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at ``point``.

    Inputs and outputs are flattened; the result has shape
    ``(fn(point).size, point.size)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    cols = []
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = np.array(fn(x), dtype=np.float64).reshape(-1)
        flat[i] = orig - eps
        lo = np.array(fn(x), dtype=np.float64).reshape(-1)
        flat[i] = orig
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise NonFiniteError(f"fn returned non-finite output around coordinate {i}")
        cols.append((hi - lo) / (2.0 * eps))
    return np.stack(cols, axis=1)


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative discrepancy, guarded against tiny magnitudes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)
