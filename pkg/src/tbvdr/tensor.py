"""Dense tensor and matrix primitives.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order.  Modes
are zero-based.  Unfolding follows the Kolda-Bader convention: the columns of
the mode-``n`` unfolding enumerate the remaining indices with the
lower-numbered modes varying fastest, so that

    unfold(X, n) == A[n] @ khatri_rao_chain(A[N-1], ..., A[n+1], A[n-1], ..., A[0]).T

for a CP tensor ``X = [[A[0], ..., A[N-1]]]``.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.linalg as la


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a symmetric system cannot be factorized, even with jitter."""

    def __init__(self, message, residual=np.nan):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SpdSolveOptions:
    jitter_scale: float = 1e-10
    max_jitter_attempts: int = 3

    def __post_init__(self):
        if self.jitter_scale < 0:
            raise ValueError("jitter_scale must be nonnegative")
        if self.max_jitter_attempts < 0:
            raise ValueError("max_jitter_attempts must be nonnegative")


def _check_mode(ndim, mode):
    if not 0 <= mode < ndim:
        raise ValueError(f"mode {mode} out of range for order-{ndim} tensor")


def inner(a, b):
    """Sum of elementwise products of two tensors of identical shape."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def fro_norm(t):
    t = np.asarray(t, dtype=float)
    return float(np.sqrt(inner(t, t)))


def unfold(t, mode):
    """Mode-``mode`` matricization, shape ``(D_mode, prod of other extents)``."""
    t = np.asarray(t)
    _check_mode(t.ndim, mode)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(m, mode, shape):
    """Inverse of :func:`unfold`."""
    m = np.asarray(m)
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), mode)
    rest = shape[:mode] + shape[mode + 1 :]
    if m.ndim != 2 or m.shape[0] != shape[mode] or m.shape[1] != int(np.prod(rest)):
        raise ValueError(
            f"matrix of shape {m.shape} cannot be folded along mode {mode} into {shape}"
        )
    full = np.reshape(m, (shape[mode],) + rest, order="F")
    return np.ascontiguousarray(np.moveaxis(full, 0, mode))


def mode_vec_product(t, v, mode):
    """Contract ``t`` with vector ``v`` along ``mode``; the result has one mode less.

    With ``mode`` the last axis this is ``sum_k v[k] * t[..., k]``.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_mode(t.ndim, mode)
    if v.ndim != 1 or v.shape[0] != t.shape[mode]:
        raise ValueError(
            f"vector of length {v.shape} does not match extent {t.shape[mode]} of mode {mode}"
        )
    return np.tensordot(t, v, axes=([mode], [0]))


def khatri_rao(a, b):
    """Columnwise Kronecker product; row index of ``b`` varies fastest."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"column-count mismatch: {a.shape} vs {b.shape}")
    return (a[:, None, :] * b[None, :, :]).reshape(-1, a.shape[1])


def khatri_rao_chain(mats):
    """Left fold of :func:`khatri_rao` over ``mats``.

    The last matrix's row index varies fastest.  For the Kolda-Bader
    companion of ``unfold(X, n)`` pass the factors in *descending* mode order
    with ``n`` removed.
    """
    mats = list(mats)
    if not mats:
        raise ValueError("khatri_rao_chain needs at least one matrix")
    return reduce(khatri_rao, mats[1:], np.asarray(mats[0], dtype=float))


def hadamard(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a * b


def gram(a):
    a = np.asarray(a, dtype=float)
    g = a.T @ a
    return 0.5 * (g + g.T)


def hadamard_grams(mats, rank):
    """Elementwise product of the Gram matrices of ``mats``; all-ones if empty."""
    out = np.ones((rank, rank))
    for m in mats:
        out = out * gram(m)
    return out


def cp_compose(factors):
    """Materialize ``sum_r outer(factors[0][:, r], ..., factors[-1][:, r])``."""
    factors = [np.asarray(f, dtype=float) for f in factors]
    if not factors:
        raise ValueError("cp_compose needs at least one factor")
    rank = factors[0].shape[1]
    if any(f.ndim != 2 or f.shape[1] != rank for f in factors):
        raise ValueError("all factor matrices must share the same column count")
    shape = tuple(f.shape[0] for f in factors)
    # last factor's rows vary fastest, i.e. row-major order of the result
    return khatri_rao_chain(factors).sum(axis=1).reshape(shape)


def spd_solve(a, b, opts=None):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    A Cholesky factorization is attempted first.  If it fails, a diagonal
    jitter ``jitter_scale * trace(a) / n`` is added and doubled on every
    further attempt.

    Raises
    ------
    SingularSystemError
        If no attempt yields a factorization.
    """
    opts = opts or SpdSolveOptions()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularSystemError("non-finite entries in linear system")

    n = a.shape[0]
    delta = opts.jitter_scale * abs(np.trace(a)) / n
    if delta == 0.0:
        delta = opts.jitter_scale
    shifted = a
    for attempt in range(opts.max_jitter_attempts + 1):
        try:
            factor = la.cho_factor(shifted, lower=True, check_finite=False)
            return la.cho_solve(factor, b, check_finite=False)
        except la.LinAlgError:
            if attempt == opts.max_jitter_attempts:
                break
            shifted = a + delta * np.eye(n)
            delta *= 2.0
    x = np.linalg.lstsq(a, b, rcond=None)[0]
    residual = float(np.linalg.norm(a @ x - b))
    raise SingularSystemError(
        f"singular {n}x{n} system after {opts.max_jitter_attempts} jitter attempts "
        f"(least-squares residual {residual:.3e})",
        residual=residual,
    )


def right_solve(b, a, opts=None):
    """Return ``b @ inv(a)`` for symmetric positive definite ``a``."""
    return spd_solve(a, np.asarray(b, dtype=float).T, opts).T
