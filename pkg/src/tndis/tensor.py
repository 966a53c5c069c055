"""Dense tensor primitives.

Dense tensors are plain ``float64`` numpy arrays in C (row-major) order.
This module adds the few operations the rest of the package needs on top of
numpy: validated pairwise contraction, deterministic SVD/QR, and the
orthogonal parametrisation ``exp(L - L^T)`` of a strictly lower-triangular
matrix ``L`` together with its reverse-mode derivative.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, ShapeError

#: Relative cutoff below which singular values count as zero.
SVD_RTOL = 1e-12

#: Taylor order used by :func:`expm_skew`.
TAYLOR_ORDER = 12

# scaling-and-squaring brings the 1-norm under this value before the series
_SCALED_NORM = 0.5


def as_tensor(a) -> np.ndarray:
    """Return ``a`` as a contiguous float64 array with all extents >= 1."""
    t = np.ascontiguousarray(a, dtype=np.float64)
    if any(d < 1 for d in t.shape):
        raise ShapeError(f"all extents must be >= 1, got shape {t.shape}")
    return t


def contract(a, b, axes: Sequence[tuple[int, int]]) -> np.ndarray:
    """Sum over paired axes of ``a`` and ``b``.

    The result carries the uncontracted axes of ``a`` followed by those of
    ``b``, both in their original order.

    Examples
    --------
    >>> contract([[1, 2], [3, 4]], [[5, 6], [7, 8]], [(1, 0)])
    array([[19., 22.],
           [43., 50.]])
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax_a, ax_b = [], []
    for i, j in axes:
        if not (-a.ndim <= i < a.ndim) or not (-b.ndim <= j < b.ndim):
            raise IndexError(f"axis pair ({i}, {j}) out of range for ranks {a.ndim}, {b.ndim}")
        i, j = i % a.ndim, j % b.ndim
        if a.shape[i] != b.shape[j]:
            raise DimensionError(
                f"cannot contract axis {i} (extent {a.shape[i]}) with axis {j} (extent {b.shape[j]})"
            )
        ax_a.append(i)
        ax_b.append(j)
    if len(set(ax_a)) != len(ax_a) or len(set(ax_b)) != len(ax_b):
        raise IndexError("an axis may be contracted at most once")
    return np.tensordot(a, b, axes=(ax_a, ax_b))


class SvdResult(NamedTuple):
    """Thin SVD ``a = u @ diag(s) @ vt`` with non-increasing ``s``."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def rank(self, rtol: float = SVD_RTOL) -> int:
        """Number of singular values above ``rtol * s[0]``."""
        if self.s.size == 0 or self.s[0] == 0.0:
            return 0
        return int(np.count_nonzero(self.s > rtol * self.s[0]))

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def _require_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} expects a matrix, got {a.ndim} axes")
    return a


def svd(a) -> SvdResult:
    """Thin singular value decomposition with a deterministic sign gauge.

    Each column of ``u`` is flipped so that its largest-magnitude entry is
    positive (first such entry on ties); the matching row of ``vt`` is
    flipped with it.
    """
    a = _require_matrix(a, "svd")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"SVD did not converge for {a.shape} input: {exc}") from exc
    if u.shape[1]:
        pivot = np.argmax(np.abs(u), axis=0)
        signs = np.sign(u[pivot, np.arange(u.shape[1])])
        signs[signs == 0] = 1.0
        u = u * signs
        vt = vt * signs[:, None]
    return SvdResult(u, s, vt)


def qr(a) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR decomposition with a non-negative diagonal of ``r``."""
    a = _require_matrix(a, "qr")
    q, r = np.linalg.qr(a, mode="reduced")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, r * signs[:, None]


def strictly_lower(a) -> np.ndarray:
    """Copy of ``a`` (or a stack of matrices) with diagonal and upper triangle zeroed."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"expected square matrices, got shape {a.shape}")
    return np.tril(a, k=-1)


class _ExpmTape(NamedTuple):
    scaled: np.ndarray  # A / 2^s
    horner: list  # Horner partial sums, innermost first
    squares: list  # matrices before each squaring
    steps: int


def _expm_forward(skew: np.ndarray) -> tuple[np.ndarray, _ExpmTape]:
    norm = float(np.max(np.sum(np.abs(skew), axis=-2))) if skew.size else 0.0
    steps = max(0, math.ceil(math.log2(norm / _SCALED_NORM))) if norm > _SCALED_NORM else 0
    b = skew / (2.0**steps)
    eye = np.broadcast_to(np.eye(skew.shape[-1]), skew.shape)
    h = eye.copy()
    horner = [h]
    for k in range(TAYLOR_ORDER, 0, -1):
        h = eye + (b @ h) / k
        horner.append(h)
    x = h
    squares = []
    for _ in range(steps):
        squares.append(x)
        x = x @ x
    return x, _ExpmTape(b, horner, squares, steps)


def _expm_backward(tape: _ExpmTape, grad: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the Taylor/squaring pipeline w.r.t. its input."""
    g = grad
    for x in reversed(tape.squares):
        xt = np.swapaxes(x, -1, -2)
        g = g @ xt + xt @ g
    b_t = np.swapaxes(tape.scaled, -1, -2)
    g_b = np.zeros_like(tape.scaled)
    # horner[j+1] = I + b @ horner[j] / k with k = TAYLOR_ORDER - j
    for j in range(TAYLOR_ORDER - 1, -1, -1):
        k = TAYLOR_ORDER - j
        inner = tape.horner[j]
        g_b = g_b + g @ np.swapaxes(inner, -1, -2) / k
        g = b_t @ g / k
    return g_b / (2.0**tape.steps)


def expm_skew(lower) -> np.ndarray:
    """Orthogonal matrix ``exp(L - L^T)`` from the strictly lower triangle of ``lower``.

    Entries on and above the diagonal are ignored. Accepts a single square
    matrix or a stack ``(..., d, d)``. The exponential uses scaling and
    squaring around a degree-12 Taylor polynomial, so the result has
    determinant +1 and ``g.T @ g = I`` to roughly machine precision.
    """
    low = strictly_lower(lower)
    skew = low - np.swapaxes(low, -1, -2)
    g, _ = _expm_forward(skew)
    return g


def expm_skew_vjp(lower) -> tuple[np.ndarray, "callable"]:
    """Return ``expm_skew(lower)`` and a function mapping ``dL/dg`` to ``dL/dlower``.

    The returned gradient lives on the strictly lower triangle (zeros elsewhere).
    """
    low = strictly_lower(lower)
    skew = low - np.swapaxes(low, -1, -2)
    g, tape = _expm_forward(skew)

    def backward(grad_g: np.ndarray) -> np.ndarray:
        g_skew = _expm_backward(tape, np.asarray(grad_g, dtype=np.float64))
        return np.tril(g_skew - np.swapaxes(g_skew, -1, -2), k=-1)

    return g, backward
