"""Bayesian vectorial dimension reduction for tensors.

Each sample ``Y_i`` (an order-N array) is modelled as

    Y_i = sum_k h_ik * W_k + E_i,    h_i ~ N(0, I_K),   E_i ~ N(0, 1/rho),

where the K basis tensors ``W_k`` are the frontal slices of an (N+1)-order
CP tensor ``[[W1, ..., WN, Wh]]`` of rank R, and ``rho`` has a Gamma(a0, b0)
prior (shape/rate).  Learning is variational EM: Gaussian posteriors for the
codes, a Gamma posterior for the precision, and block least-squares updates
of the CP factors.

Sample sets are arrays of shape ``(D1, ..., DN, M)``; the last axis indexes
samples.
"""

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.special import digamma, gammaln

from .tensor import (
    cp_compose,
    hadamard_grams,
    khatri_rao_chain,
    right_solve,
    spd_solve,
    unfold,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CpBasis:
    """CP factors of the projection tensor.

    ``factors[n]`` is ``D_n x R`` and ``w_h`` is ``K x R``; the scaling
    vector of the CP form is fixed to ones.
    """

    factors: tuple
    w_h: np.ndarray

    def __post_init__(self):
        # C order keeps GEMM rounding identical for fitted and loaded bases
        factors = tuple(np.ascontiguousarray(f, dtype=float) for f in self.factors)
        w_h = np.ascontiguousarray(self.w_h, dtype=float)
        if not factors:
            raise ValueError("basis needs at least one factor matrix")
        if w_h.ndim != 2:
            raise ValueError("w_h must be a K x R matrix")
        r = w_h.shape[1]
        for n, f in enumerate(factors):
            if f.ndim != 2 or f.shape[1] != r:
                raise ValueError(f"factor {n} has shape {f.shape}, expected (D, {r})")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "w_h", w_h)

    @property
    def dims(self):
        return tuple(f.shape[0] for f in self.factors)

    @property
    def order(self):
        return len(self.factors)

    @property
    def k(self):
        return self.w_h.shape[0]

    @property
    def r(self):
        return self.w_h.shape[1]

    def with_factor(self, n, value):
        factors = list(self.factors)
        factors[n] = value
        return replace(self, factors=tuple(factors))

    def with_w_h(self, value):
        return replace(self, w_h=value)

    def tensor(self):
        """The full ``(D1, ..., DN, K)`` projection tensor."""
        return cp_compose(list(self.factors) + [self.w_h])


@dataclass(frozen=True)
class LatentPosterior:
    u: np.ndarray  # K x M posterior means
    sigma: np.ndarray  # K x K covariance shared by all samples


@dataclass(frozen=True)
class NoisePosterior:
    a_bar: float
    b_bar: float

    def __post_init__(self):
        if not (self.a_bar > 0 and self.b_bar > 0):
            raise ValueError("Gamma parameters must be positive")

    @property
    def mean(self):
        return self.a_bar / self.b_bar

    @property
    def noise_std(self):
        return self.mean ** -0.5


@dataclass(frozen=True)
class ModelConfig:
    k: int
    r: int
    a0: float = 1.0
    b0: float = 1.0
    tol: float = 1e-4
    max_iters: int = 200
    seed: Optional[int] = 0
    init_scale: Optional[float] = None  # None means r ** -0.5
    center: bool = False

    def __post_init__(self):
        if self.k < 1 or self.r < 1:
            raise ValueError("k and r must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (self.a0 > 0 and self.b0 > 0):
            raise ValueError("a0 and b0 must be positive")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ValueError("init_scale must be positive")

    @property
    def scale(self):
        return self.r ** -0.5 if self.init_scale is None else self.init_scale


@dataclass(frozen=True)
class TbvModel:
    basis: CpBasis
    noise: NoisePosterior
    config: ModelConfig
    mean: Optional[np.ndarray] = None

    @property
    def dims(self):
        return self.basis.dims


@dataclass
class FitReport:
    iterations: int = 0
    e_trace: List[float] = field(default_factory=list)
    elbo_trace: List[float] = field(default_factory=list)
    seconds_trace: List[float] = field(default_factory=list)
    converged: bool = False
    wall_seconds: float = 0.0
    posterior: Optional[LatentPosterior] = None


def _check_data(basis, data):
    data = np.asarray(data, dtype=float)
    if data.ndim != basis.order + 1 or data.shape[:-1] != basis.dims:
        raise ValueError(
            f"sample set of shape {data.shape} does not match basis dims {basis.dims} + (M,)"
        )
    return data


def _flat(data):
    # row i of the transpose is the row-major ravel of sample i
    return data.reshape(-1, data.shape[-1])


def _full_kr(basis):
    return khatri_rao_chain(basis.factors)


def _bar(basis, n):
    """Khatri-Rao product of all factors except ``n``, in descending mode order."""
    others = [basis.factors[m] for m in reversed(range(basis.order)) if m != n]
    if not others:
        return np.ones((1, basis.r))
    return khatri_rao_chain(others)


def sample_projections(basis, data, mode=None):
    """``Z[i, r] = <Y_i, W1[:, r] o ... o WN[:, r]>`` for every sample.

    With ``mode=None`` the inner products come from one matrix product with
    the full Khatri-Rao matrix.  With an explicit ``mode`` they are computed
    as ``diag(W_n^T Y_(n) Wbar_n)``; both give the same numbers.
    """
    data = _check_data(basis, data)
    if mode is None:
        return _flat(data).T @ _full_kr(basis)
    if not 0 <= mode < basis.order:
        raise ValueError(f"mode {mode} out of range")
    m = data.shape[-1]
    d_n = basis.dims[mode]
    # columns of the full unfolding: other sample modes fastest, sample index slowest
    y_n = unfold(data, mode).reshape(d_n, m, -1)
    p = np.einsum("dr,dij->irj", basis.factors[mode], y_n)
    return np.einsum("irj,jr->ir", p, _bar(basis, mode))


def sigma_w(basis):
    """Gram matrix of the basis slices, ``tr(W_p^T W_q)`` at ``(p, q)``."""
    s = basis.w_h @ hadamard_grams(basis.factors, basis.r) @ basis.w_h.T
    return 0.5 * (s + s.T)


def compute_a(basis, sample, mode=0):
    """Inner products ``<W_k, sample>`` for k = 1..K."""
    sample = np.asarray(sample, dtype=float)
    if sample.shape != basis.dims:
        raise ValueError(f"sample shape {sample.shape} does not match {basis.dims}")
    z = sample_projections(basis, sample[..., None], mode)
    return basis.w_h @ z[0]


def _posterior_means(basis, rho, data, sw=None, columnwise=False):
    sw = sigma_w(basis) if sw is None else sw
    system = sw + np.eye(basis.k) / rho
    if not columnwise:
        a = basis.w_h @ sample_projections(basis, data).T
        return spd_solve(system, a)
    # one sample at a time so that a sample's code never depends on its batch
    kr = _full_kr(basis)
    flat = _flat(data)
    out = np.empty((basis.k, flat.shape[1]))
    for i in range(flat.shape[1]):
        y = np.ascontiguousarray(flat[:, i])
        out[:, i] = spd_solve(system, basis.w_h @ (y @ kr))
    return out


def e_step(basis, noise, data):
    """Gaussian posterior over the latent codes given the current basis."""
    data = _check_data(basis, data)
    rho = noise.mean
    sw = sigma_w(basis)
    eye = np.eye(basis.k)
    sigma = spd_solve(eye + rho * sw, eye)
    sigma = 0.5 * (sigma + sigma.T)
    u = _posterior_means(basis, rho, data, sw)
    return LatentPosterior(u=u, sigma=sigma)


def residual_sq(basis, data, u):
    """``sum_i ||Y_i - sum_k u_ik W_k||_F^2``."""
    data = _check_data(basis, data)
    recon = _full_kr(basis) @ (basis.w_h.T @ u)
    return float(np.sum((_flat(data) - recon) ** 2))


def objective_fprime(basis, data, post, _resid=None):
    """Expected squared error ``sum_i E||Y_i - W x h_i||^2`` under the code posterior.

    This is the quantity the M-step block updates minimize; it also equals
    the ``psi`` statistic of the precision update.
    """
    m = np.shape(data)[-1]
    resid = residual_sq(basis, data, post.u) if _resid is None else _resid
    return resid + m * float(np.sum(sigma_w(basis) * post.sigma))


def update_noise(basis, data, post, config):
    data = _check_data(basis, data)
    m = data.shape[-1]
    psi = objective_fprime(basis, data, post)
    a_bar = config.a0 + np.prod(basis.dims) * m / 2.0
    b_bar = config.b0 + 0.5 * psi
    return NoisePosterior(a_bar=float(a_bar), b_bar=float(b_bar))


def _weighted_data(basis, data, post):
    # sum over samples of Y_i weighted by (u_i^T Wh)_r, shape (D1, ..., DN, R)
    g = post.u.T @ basis.w_h
    return (_flat(data) @ g).reshape(basis.dims + (basis.r,))


def m_step_factor(basis, data, post, n, weighted=None):
    """Exact minimizer of :func:`objective_fprime` over factor ``n``.

    ``weighted`` may carry the precomputed ``_weighted_data`` array, which
    does not depend on the mode factors.
    """
    data = _check_data(basis, data)
    if not 0 <= n < basis.order:
        raise ValueError(f"mode {n} out of range")
    m = data.shape[-1]
    t = _weighted_data(basis, data, post) if weighted is None else weighted
    # contract every other mode with its factor, rank index shared
    for j in reversed(range(basis.order)):
        if j == n:
            continue
        t = np.moveaxis(t, j, -2)
        t = np.einsum("...dr,dr->...r", t, basis.factors[j])
    rhs = t.reshape(basis.dims[n], basis.r)

    g = post.u.T @ basis.w_h
    others = [basis.factors[j] for j in range(basis.order) if j != n]
    code_second_moment = m * (basis.w_h.T @ post.sigma @ basis.w_h) + g.T @ g
    normal = hadamard_grams(others, basis.r) * code_second_moment
    return right_solve(rhs, 0.5 * (normal + normal.T))


def m_step_wh(basis, data, post, mode=None):
    """Exact minimizer of :func:`objective_fprime` over ``Wh``.

    The result does not depend on ``mode``; it only selects how the
    sample-to-rank-one inner products are evaluated.
    """
    data = _check_data(basis, data)
    m = data.shape[-1]
    z = sample_projections(basis, data, mode)
    left = post.u @ post.u.T + m * post.sigma
    gamma = hadamard_grams(basis.factors, basis.r)
    return spd_solve(0.5 * (left + left.T), right_solve(post.u @ z, gamma))


def fit_quality(data, basis, post, _resid=None):
    """``1 - ||Y - W x U^T||_F / ||Y||_F`` (higher is better, at most 1)."""
    data = _check_data(basis, data)
    norm = np.linalg.norm(data)
    if norm == 0:
        raise ValueError("fit quality is undefined for all-zero data")
    resid = residual_sq(basis, data, post.u) if _resid is None else _resid
    return 1.0 - np.sqrt(resid) / norm


def gaussian_kl(post):
    """``sum_i KL(N(u_i, Sigma) || N(0, I))``."""
    k, m = post.u.shape
    _, logdet = np.linalg.slogdet(post.sigma)
    return 0.5 * (m * (np.trace(post.sigma) - k - logdet) + float(np.sum(post.u**2)))


def gamma_kl(a_q, b_q, a_p, b_p):
    """KL divergence between shape/rate Gamma distributions, q against p."""
    return (
        (a_q - a_p) * digamma(a_q)
        - gammaln(a_q)
        + gammaln(a_p)
        + a_p * (np.log(b_q) - np.log(b_p))
        + a_q * (b_p - b_q) / b_q
    )


def elbo(basis, noise, post, data, config, _resid=None):
    data = _check_data(basis, data)
    m = data.shape[-1]
    d = float(np.prod(basis.dims))
    psi = objective_fprime(basis, data, post, _resid)
    e_log_rho = digamma(noise.a_bar) - np.log(noise.b_bar)
    loglik = 0.5 * d * m * (e_log_rho - np.log(2 * np.pi)) - 0.5 * noise.mean * psi
    return float(
        loglik
        - gaussian_kl(post)
        - gamma_kl(noise.a_bar, noise.b_bar, config.a0, config.b0)
    )


def init_basis(dims, config, rng=None):
    """Random basis: iid normals scaled by ``config.scale``, factors then ``Wh``."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    factors = [rng.standard_normal((d, config.r)) * config.scale for d in dims]
    w_h = rng.standard_normal((config.k, config.r)) * config.scale
    return CpBasis(factors=tuple(factors), w_h=w_h)


def fit(data, config, basis=None, callback=None):
    """Variational EM for the model.

    Each iteration updates the code posterior, then the precision posterior,
    then the factors ``W1..WN`` in ascending order followed by ``Wh``.  The
    fit quality ``e(t)`` is evaluated after the M-step with the codes from
    the same iteration's E-step; iteration stops once consecutive values
    differ by less than ``config.tol`` or after ``config.max_iters``.

    Parameters
    ----------
    data : ndarray, shape (D1, ..., DN, M)
    config : ModelConfig
    basis : CpBasis, optional
        Starting basis; drawn from ``config.seed`` when omitted.
    callback : callable, optional
        Called as ``callback(t, e, elbo)`` after every iteration.

    Returns
    -------
    model : TbvModel
    report : FitReport
        ``report.posterior`` holds the code posterior of the training set
        under the returned model.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim < 2:
        raise ValueError("sample set must have at least one sample mode and one data mode")
    if not np.all(np.isfinite(data)):
        raise ValueError("sample set contains non-finite values")
    if np.linalg.norm(data) == 0:
        raise ValueError("cannot fit all-zero data")

    mean = None
    if config.center:
        mean = data.mean(axis=-1)
        data = data - mean[..., None]
        if np.linalg.norm(data) == 0:
            raise ValueError("centered data is all zeros")

    dims = data.shape[:-1]
    if config.k > config.r:
        warnings.warn(
            f"K={config.k} exceeds CP rank R={config.r}; features may degrade",
            stacklevel=2,
        )
    if basis is None:
        basis = init_basis(dims, config)
    else:
        _check_data(basis, data)
    noise = NoisePosterior(config.a0, config.b0)
    report = FitReport()

    start = time.perf_counter()
    prev_e = None
    for t in range(1, config.max_iters + 1):
        post = e_step(basis, noise, data)
        noise = update_noise(basis, data, post, config)

        weighted = _weighted_data(basis, data, post)
        for n in range(basis.order):
            basis = basis.with_factor(n, m_step_factor(basis, data, post, n, weighted))
        basis = basis.with_w_h(m_step_wh(basis, data, post))

        resid = residual_sq(basis, data, post.u)
        e = fit_quality(data, basis, post, resid)
        bound = elbo(basis, noise, post, data, config, resid)
        report.e_trace.append(e)
        report.elbo_trace.append(bound)
        report.seconds_trace.append(time.perf_counter() - start)
        report.iterations = t
        logger.debug("iter %d: e=%.6f elbo=%.6e rho=%.4e", t, e, bound, noise.mean)
        if callback is not None:
            callback(t, e, bound)
        if prev_e is not None and abs(e - prev_e) < config.tol:
            report.converged = True
            break
        prev_e = e

    report.wall_seconds = time.perf_counter() - start
    model = TbvModel(basis=basis, noise=noise, config=config, mean=mean)
    final = e_step(basis, noise, data)
    u = _posterior_means(basis, noise.mean, data, columnwise=True)
    report.posterior = LatentPosterior(u=u, sigma=final.sigma)
    return model, report


def _prepare(model, data):
    data = np.asarray(data, dtype=float)
    if model.mean is not None:
        data = data - model.mean[..., None]
    return data


def transform(model, sample):
    """Posterior mean code of one sample (shape ``dims``) or a sample set.

    A single sample gives a length-K vector; a ``(D1, ..., DN, M)`` set gives
    a ``K x M`` matrix.
    """
    sample = np.asarray(sample, dtype=float)
    if sample.shape == model.dims:
        return transform(model, sample[..., None])[:, 0]
    data = _check_data(model.basis, _prepare(model, sample))
    return _posterior_means(model.basis, model.noise.mean, data, columnwise=True)


def reconstruct(model, u):
    """``sum_k u_k W_k`` (plus the stored mean), without forming the full basis."""
    u = np.asarray(u, dtype=float)
    basis = model.basis
    if u.ndim != 1 or u.shape[0] != basis.k:
        raise ValueError(f"code of shape {u.shape} does not match K={basis.k}")
    weights = u @ basis.w_h
    out = cp_compose(list(basis.factors[:-1]) + [basis.factors[-1] * weights])
    if model.mean is not None:
        out = out + model.mean
    return out
