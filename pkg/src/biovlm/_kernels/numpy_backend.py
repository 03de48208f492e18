"""Pure-NumPy kernel implementations.

This is the fallback backend used when the compiled extension is unavailable
(or disabled via ``BIOVLM_PURE_PYTHON=1``). Every function here has a
signature-identical twin in ``_core.pyx``; ``tests/test_kernels.py`` checks
the two agree. All inputs are C-contiguous float64 arrays unless noted.
"""

from __future__ import annotations

import numpy as np

LOG_FLOOR = 1e-12


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction, over the last axis of a 2-D array."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def l2norm_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row to unit length. Returns (normalized, norms)."""
    norms = np.sqrt((x * x).sum(axis=1))
    return x / norms[:, None], norms


def l2norm_rows_backward(x: np.ndarray, norms: np.ndarray,
                         gy: np.ndarray) -> np.ndarray:
    # d(x/n)/dx = I/n - x x^T / n^3
    n = norms[:, None]
    proj = (gy * x).sum(axis=1, keepdims=True)
    return gy / n - x * (proj / n ** 3)


def entropy_rows(p: np.ndarray) -> np.ndarray:
    """Shannon entropy (natural log) per row, with 0*log(0) = 0 exactly."""
    logp = np.log(np.maximum(p, LOG_FLOOR))
    return -np.where(p > 0.0, p * logp, 0.0).sum(axis=1)


def entropy_rows_backward(p: np.ndarray, gh: np.ndarray) -> np.ndarray:
    logp = np.log(np.maximum(p, LOG_FLOOR))
    return -(logp + 1.0) * gh[:, None]


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return gy * (1.0 - y * y)


def log_floored(x: np.ndarray, eps: float) -> np.ndarray:
    return np.log(np.maximum(x, eps))


def log_floored_backward(x: np.ndarray, eps: float, gy: np.ndarray) -> np.ndarray:
    return np.where(x > eps, gy / np.maximum(x, eps), 0.0)


def exp_forward(x: np.ndarray) -> np.ndarray:
    return np.exp(x)


def sum_mid(x: np.ndarray) -> np.ndarray:
    """Sum over the middle axis of a (rows, n, cols) array."""
    return x.sum(axis=1)


def mean_mid(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=1)


def take_per_row(p: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Pick one element per row: out[r] = p[r, idx[r]]."""
    return p[np.arange(p.shape[0]), idx]


def take_per_row_backward(rows: int, cols: int, idx: np.ndarray,
                          gy: np.ndarray) -> np.ndarray:
    g = np.zeros((rows, cols), dtype=np.float64)
    g[np.arange(rows), idx] = gy
    return g
