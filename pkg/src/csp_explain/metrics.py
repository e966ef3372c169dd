"""DTW, soft-DTW and the soft-DTW gradient for univariate series.

The per-cell cost is the squared difference of the aligned values. Dynamic
programs run under numba; all arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import EmptyList, EmptySeries

__all__ = [
    "SoftDtwParams",
    "dtw",
    "soft_min",
    "soft_dtw",
    "soft_dtw_grad",
    "soft_dtw_divergence",
    "soft_dtw_divergence_grad",
    "cdist_dtw",
    "cdist_soft_dtw_divergence",
]


@dataclass(frozen=True)
class SoftDtwParams:
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ValueError(f"gamma must be a positive finite number, got {self.gamma!r}")


def _series(x, name="series") -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise EmptySeries(f"{name} is empty")
    return a


def _gamma(gamma) -> float:
    if isinstance(gamma, SoftDtwParams):
        return gamma.gamma
    return SoftDtwParams(float(gamma)).gamma


@njit(cache=True, nogil=True)
def _softmin3(a, b, c, gamma):
    # shift by the hard minimum; its own term is exp(0) = 1
    if a <= b and a <= c:
        m, u, v = a, b, c
    elif b <= c:
        m, u, v = b, a, c
    else:
        m, u, v = c, a, b
    if m == np.inf:
        return np.inf
    # log1p keeps the tiny-correction digits when one path dominates
    return m - gamma * np.log1p(np.exp((m - u) / gamma) + np.exp((m - v) / gamma))


@njit(cache=True, nogil=True)
def _dtw(a, b):
    n, m = a.shape[0], b.shape[0]
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d = a[i - 1] - b[j - 1]
            acc[i, j] = d * d + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc[n, m]


@njit(cache=True, nogil=True)
def _soft_dtw_table(a, b, gamma):
    n, m = a.shape[0], b.shape[0]
    R = np.full((n + 2, m + 2), np.inf)
    R[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d = a[i - 1] - b[j - 1]
            R[i, j] = d * d + _softmin3(R[i - 1, j], R[i, j - 1], R[i - 1, j - 1], gamma)
    return R


@njit(cache=True, nogil=True)
def _soft_dtw_grad(a, b, gamma):
    n, m = a.shape[0], b.shape[0]
    R = _soft_dtw_table(a, b, gamma)
    value = R[n, m]
    D = np.zeros((n + 2, m + 2))
    for i in range(n):
        for j in range(m):
            d = a[i] - b[j]
            D[i + 1, j + 1] = d * d
    for i in range(n + 2):
        R[i, m + 1] = -np.inf
    for j in range(m + 2):
        R[n + 1, j] = -np.inf
    R[n + 1, m + 1] = value
    # E[i, j]: derivative of the final value w.r.t. cell cost (i, j)
    E = np.zeros((n + 2, m + 2))
    E[n + 1, m + 1] = 1.0
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            x = np.exp((R[i + 1, j] - R[i, j] - D[i + 1, j]) / gamma)
            y = np.exp((R[i, j + 1] - R[i, j] - D[i, j + 1]) / gamma)
            z = np.exp((R[i + 1, j + 1] - R[i, j] - D[i + 1, j + 1]) / gamma)
            E[i, j] = E[i + 1, j] * x + E[i, j + 1] * y + E[i + 1, j + 1] * z
    grad = np.zeros(n)
    for i in range(n):
        g = 0.0
        for j in range(m):
            g += E[i + 1, j + 1] * 2.0 * (a[i] - b[j])
        grad[i] = g
    return value, grad


@njit(cache=True, nogil=True)
def _cdist_dtw(A, B):
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = _dtw(A[i], B[j])
    return out


@njit(cache=True, nogil=True)
def _self_soft_dtw(A, gamma):
    out = np.empty(A.shape[0])
    for i in range(A.shape[0]):
        a = A[i]
        out[i] = _soft_dtw_table(a, a, gamma)[a.shape[0], a.shape[0]]
    return out


@njit(cache=True, nogil=True)
def _cdist_soft_dtw(A, B, gamma):
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = _soft_dtw_table(A[i], B[j], gamma)[A.shape[1], B.shape[1]]
    return out


def dtw(a, b) -> float:
    """Classic DTW: minimum summed squared difference over monotone alignments.

    >>> dtw([0.0], [2.0])
    4.0
    """
    return float(_dtw(_series(a, "a"), _series(b, "b")))


def soft_min(values, gamma) -> float:
    """Smoothed minimum ``-gamma * log(sum(exp(-q / gamma)))``.

    Evaluated with the max-shift trick, so it is safe for tiny ``gamma``.
    """
    q = np.asarray(values, dtype=np.float64).reshape(-1)
    if q.size == 0:
        raise EmptyList("soft_min of an empty list")
    g = _gamma(gamma)
    z = -q / g
    k = int(z.argmax())
    m = z[k]
    if m == -np.inf:
        return float("inf")
    rest = np.exp(np.delete(z, k) - m).sum()
    return float(-g * (np.log1p(rest) + m))


def soft_dtw(a, b, gamma=1.0) -> float:
    """Soft-DTW value between two series.

    Parameters
    ----------
    a, b : array-like, 1-D
        Non-empty series, lengths may differ.
    gamma : float or SoftDtwParams
        Smoothing factor, strictly positive.

    Returns
    -------
    float
        Soft minimum over all alignment costs. Can be negative.
    """
    a, b = _series(a, "a"), _series(b, "b")
    return float(_soft_dtw_table(a, b, _gamma(gamma))[a.size, b.size])


def soft_dtw_grad(a, b, gamma=1.0) -> np.ndarray:
    """Gradient of :func:`soft_dtw` with respect to the elements of ``a``."""
    a, b = _series(a, "a"), _series(b, "b")
    return _soft_dtw_grad(a, b, _gamma(gamma))[1]


def soft_dtw_value_and_grad(a, b, gamma=1.0) -> tuple[float, np.ndarray]:
    a, b = _series(a, "a"), _series(b, "b")
    value, grad = _soft_dtw_grad(a, b, _gamma(gamma))
    return float(value), grad


def soft_dtw_divergence(a, b, gamma=1.0) -> float:
    """Debiased soft-DTW: ``sdtw(a, b) - (sdtw(a, a) + sdtw(b, b)) / 2``.

    Non-negative and zero when ``a == b``; used as the clustering dissimilarity.
    """
    g = _gamma(gamma)
    return soft_dtw(a, b, g) - 0.5 * (soft_dtw(a, a, g) + soft_dtw(b, b, g))


def soft_dtw_divergence_grad(a, b, gamma=1.0) -> np.ndarray:
    """Gradient of :func:`soft_dtw_divergence` with respect to ``a``."""
    a, b = _series(a, "a"), _series(b, "b")
    g = _gamma(gamma)
    # d/da sdtw(a, a) is twice the first-argument gradient by symmetry
    return _soft_dtw_grad(a, b, g)[1] - _soft_dtw_grad(a, a, g)[1]


def _stack(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] == 0:
        raise EmptySeries(f"expected a non-empty (n, t) array, got shape {X.shape}")
    return X


def cdist_dtw(A, B=None) -> np.ndarray:
    """Pairwise DTW between the rows of ``A`` and ``B`` (``B`` defaults to ``A``)."""
    A = _stack(A)
    B = A if B is None else _stack(B)
    return _cdist_dtw(A, B)


def cdist_soft_dtw_divergence(A, B, gamma=1.0, self_A=None, self_B=None) -> np.ndarray:
    """Pairwise soft-DTW divergence between the rows of ``A`` and ``B``.

    ``self_A``/``self_B`` may pass precomputed ``sdtw(x, x)`` values.
    """
    A, B = _stack(A), _stack(B)
    g = _gamma(gamma)
    sa = _self_soft_dtw(A, g) if self_A is None else np.asarray(self_A, dtype=np.float64)
    sb = _self_soft_dtw(B, g) if self_B is None else np.asarray(self_B, dtype=np.float64)
    return _cdist_soft_dtw(A, B, g) - 0.5 * (sa[:, None] + sb[None, :])


def self_soft_dtw(A, gamma=1.0) -> np.ndarray:
    """``sdtw(x, x)`` for every row ``x`` of ``A``."""
    return _self_soft_dtw(_stack(A), _gamma(gamma))
