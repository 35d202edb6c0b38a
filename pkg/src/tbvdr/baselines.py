"""Reference feature extractors: CP-ALS on the stacked sample tensor, and PCA."""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .tensor import SpdSolveOptions, cp_compose, hadamard_grams, khatri_rao_chain, right_solve, unfold


@dataclass
class CpAlsResult:
    factors: list  # N+1 matrices, each with unit-norm columns; last one is M x R
    lambdas: np.ndarray
    fit_trace: List[float] = field(default_factory=list)

    @property
    def features(self):
        """Sample-mode factor with the component weights absorbed, ``M x R``."""
        return self.factors[-1] * self.lambdas

    def full(self):
        return cp_compose(self.factors[:-1] + [self.features])


def _normalize(mat):
    norms = np.linalg.norm(mat, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return mat / safe, norms


def cp_als(data, r, max_iters=200, tol=1e-6, seed=0, jitter=SpdSolveOptions()):
    """Rank-``r`` CP decomposition by alternating least squares.

    Factors start as seeded standard normals.  Each sweep solves every mode
    in turn and renormalizes its columns, moving the norms into ``lambdas``.
    The relative fit ``1 - ||X - X_hat|| / ||X||`` is recorded per sweep and
    iteration stops when it changes by less than ``tol``.
    """
    data = np.asarray(data, dtype=float)
    if r < 1:
        raise ValueError("rank must be at least 1")
    rng = np.random.default_rng(seed)
    order = data.ndim
    factors = [rng.standard_normal((d, r)) * r**-0.5 for d in data.shape]
    norm_x = np.linalg.norm(data)
    if norm_x == 0:
        factors = [_normalize(f)[0] for f in factors]
        return CpAlsResult(factors=factors, lambdas=np.zeros(r), fit_trace=[])

    lambdas = np.ones(r)
    fit_trace = []
    for _ in range(max_iters):
        for n in range(order):
            others = [factors[m] for m in reversed(range(order)) if m != n]
            rhs = unfold(data, n) @ khatri_rao_chain(others)
            a = right_solve(rhs, hadamard_grams(others, r), jitter)
            factors[n], lambdas = _normalize(a)
        # ||X - X_hat||^2 = ||X||^2 - 2 <X, X_hat> + ||X_hat||^2 via the last-mode solve
        gram_all = hadamard_grams(factors, r)
        model_sq = float(lambdas @ gram_all @ lambdas)
        cross = float(np.sum(rhs * factors[-1] * lambdas))
        err = np.sqrt(max(norm_x**2 - 2 * cross + model_sq, 0.0))
        fit = 1.0 - err / norm_x
        converged = bool(fit_trace) and abs(fit - fit_trace[-1]) < tol
        fit_trace.append(fit)
        if converged:
            break
    return CpAlsResult(factors=factors, lambdas=lambdas, fit_trace=fit_trace)


@dataclass
class PcaResult:
    mean: np.ndarray
    components: np.ndarray  # ambient x K, orthonormal columns
    explained: np.ndarray
    shape: tuple = ()


def pca_fit(samples, k):
    """PCA of vectorized samples; ``samples`` has shape ``(D1, ..., DN, M)``.

    Components are the leading eigenvectors of the sample covariance,
    obtained from an SVD of the centered data matrix.
    """
    samples = np.asarray(samples, dtype=float)
    shape = samples.shape[:-1]
    x = samples.reshape(-1, samples.shape[-1]).T  # M x D
    m, d = x.shape
    if not 1 <= k <= min(m, d):
        raise ValueError(f"k={k} must lie in [1, min(M, D)] = [1, {min(m, d)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    explained = s[:k] ** 2 / max(m - 1, 1)
    return PcaResult(mean=mean, components=vt[:k].T, explained=explained, shape=shape)


def pca_transform(res, sample):
    """Project one sample (or a ``(..., M)`` sample set) onto the components."""
    sample = np.asarray(sample, dtype=float)
    if sample.shape == res.shape:
        return res.components.T @ (sample.ravel() - res.mean)
    x = sample.reshape(-1, sample.shape[-1]).T
    if x.shape[1] != res.mean.shape[0]:
        raise ValueError(f"sample shape {sample.shape} does not match fitted shape {res.shape}")
    return (x - res.mean) @ res.components


def pca_reconstruct(res, codes):
    codes = np.asarray(codes, dtype=float)
    return codes @ res.components.T + res.mean
