"""Acceptance criteria, one test per criterion.

Each test records a single ``PASS``/``FAIL``/``SKIP`` line; the full list is
echoed in the pytest terminal summary under "acceptance criteria".

Criterion 9 needs external data and is skipped unless these are set:

* ``TBVDR_YALE``: ``.tbvt`` of face images, samples on the last mode.
* ``TBVDR_YALE_LABELS``: labels CSV for it. ``TBVDR_YALE_SPLITS`` (default 3).
* ``TBVDR_BERKELEY``: ``.tbvt`` shaped (time, attribute=4, sensor), sensors last.
  ``TBVDR_BERKELEY_K`` sets K = R = CP rank (default 10).
"""

import os
import time

import numpy as np
import pytest

from conftest import materialize, perturbation_probe, random_basis, random_posterior, rel, vectorized_posterior, w_matrix
from tbvdr import io
from tbvdr.baselines import cp_als
from tbvdr.metrics import (
    LabeledFeatures,
    cluster_accuracy,
    kmeans,
    knn1_classify,
    nmi,
    recognition_rate,
    relative_recon_error,
)
from tbvdr.model import (
    ModelConfig,
    NoisePosterior,
    compute_a,
    e_step,
    fit,
    m_step_factor,
    m_step_wh,
    objective_fprime,
    sigma_w,
    transform,
)
from tbvdr.synth import SynthSpec, generate
from tbvdr.tensor import gram, hadamard_grams, khatri_rao_chain

pytestmark = pytest.mark.acceptance

SEED = 42


def _verdict(log, ident, ok, detail):
    log(f"{'PASS' if ok else 'FAIL'} AC{ident} {detail}")
    assert ok, detail


def test_ac1_e_step_oracle(acceptance_log):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        order = int(rng.integers(2, 4))
        dims = tuple(int(d) for d in rng.integers(1, 6, order))
        k, r, m = (int(v) for v in rng.integers(1, [5, 5, 9]))
        basis = random_basis(rng, dims, k, r)
        data = rng.standard_normal(dims + (m,))
        noise = NoisePosterior(float(rng.uniform(1, 50)), float(rng.uniform(0.5, 20)))
        post = e_step(basis, noise, data)
        u_ref, s_ref = vectorized_posterior(basis, noise.mean, data)
        worst = max(worst, rel(post.u, u_ref), rel(post.sigma, s_ref))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-10 and seconds < 5
    _verdict(acceptance_log, 1, ok, f"E-step vs vectorized oracle: max rel {worst:.2e} (<=1e-10), {seconds:.2f}s (<5s)")


def test_ac2_gram_identities(acceptance_log):
    rng = np.random.default_rng(SEED + 1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        order = int(rng.integers(2, 5))
        dims = tuple(int(d) for d in rng.integers(1, 7, order))
        k, r = (int(v) for v in rng.integers(1, 6, 2))
        basis = random_basis(rng, dims, k, r)
        kr = khatri_rao_chain(list(basis.factors))
        worst = max(worst, rel(hadamard_grams(basis.factors, r), kr.T @ kr))
        worst = max(worst, rel(gram(kr), kr.T @ kr))
        w = w_matrix(basis)
        worst = max(worst, rel(sigma_w(basis), w.T @ w))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-10 and seconds < 5
    _verdict(acceptance_log, 2, ok, f"Khatri-Rao Gram and Sigma_W identities: max rel {worst:.2e} (<=1e-10), {seconds:.2f}s (<5s)")


def test_ac3_m_step_block_optimality(acceptance_log):
    rng = np.random.default_rng(SEED + 2)
    tol = 1e-9
    failures = []
    for inst in range(5):
        dims = tuple(int(d) for d in rng.integers(2, 6, 3))
        k, r, m = 3, 3, 8
        b = random_basis(rng, dims, k, r)
        data = rng.standard_normal(dims + (m,))
        post = random_posterior(rng, k, m)
        for n in range(b.order + 1):
            before = objective_fprime(b, data, post)
            if n < b.order:
                new = m_step_factor(b, data, post, n)
                base, worst = perturbation_probe(lambda w: objective_fprime(b.with_factor(n, w), data, post), new, rng)
                b = b.with_factor(n, new)
            else:
                new = m_step_wh(b, data, post)
                base, worst = perturbation_probe(lambda w: objective_fprime(b.with_w_h(w), data, post), new, rng)
                b = b.with_w_h(new)
            if base > before * (1 + tol) or base > worst * (1 + tol):
                failures.append((inst, n))
    ok = not failures
    _verdict(acceptance_log, 3, ok, f"M-step block optimality over 100 perturbations per block: failures {failures}")


def test_ac4_elbo_monotone(acceptance_log):
    data, *_ = generate(SynthSpec(dims=(8, 6), k=4, r=4, m=60, sigma=0.1, seed=SEED))
    start = time.perf_counter()
    _, report = fit(data, ModelConfig(k=4, r=4))
    seconds = time.perf_counter() - start
    bounds = np.array(report.elbo_trace)
    slack = 1e-8 * np.abs(bounds[1:])
    drops = np.diff(bounds)
    ok = bool(np.all(drops >= -slack)) and seconds < 30
    _verdict(
        acceptance_log, 4, ok,
        f"ELBO non-decreasing over {report.iterations} iterations: min step {drops.min():.3e}, {seconds:.2f}s (<30s)",
    )


def test_ac5_generative_recovery(acceptance_log):
    clean, *_ = generate(SynthSpec(dims=(8, 6), k=4, r=4, m=60, sigma=0.0, seed=SEED))
    model, report = fit(clean, ModelConfig(k=4, r=4, max_iters=200))
    y = clean.reshape(-1, 60)
    err = np.linalg.norm(y - w_matrix(model.basis) @ report.posterior.u) / np.linalg.norm(y)

    noisy, *_ = generate(SynthSpec(dims=(8, 6), k=4, r=4, m=60, sigma=0.1, seed=SEED))
    noisy_model, _ = fit(noisy, ModelConfig(k=4, r=4, max_iters=200))
    std = noisy_model.noise.noise_std

    # informational: recovery rate over other data seeds (fits can stall in ALS swamps)
    hits = 0
    for s in range(10):
        other, *_ = generate(SynthSpec(dims=(8, 6), k=4, r=4, m=60, sigma=0.0, seed=s))
        _, rep = fit(other, ModelConfig(k=4, r=4, max_iters=200))
        hits += 1 - rep.e_trace[-1] <= 0.05
    ok = err <= 0.05 and report.iterations <= 200 and 0.07 <= std <= 0.14
    _verdict(
        acceptance_log, 5, ok,
        f"noise-free rel error {err:.4f} (<=0.05) in {report.iterations} iters; "
        f"sigma=0.1 gives rho^-1/2 = {std:.4f} (in [0.07, 0.14]); seeds 0-9 recovered {hits}/10",
    )


def test_ac6_mode_independence(acceptance_log):
    rng = np.random.default_rng(SEED + 3)
    worst = 0.0
    for _ in range(20):
        dims = tuple(int(d) for d in rng.integers(2, 6, 3))
        k, r, m = (int(v) for v in rng.integers(1, [5, 5, 9]))
        b = random_basis(rng, dims, k, r)
        data = rng.standard_normal(dims + (m,))
        post = random_posterior(rng, k, m)
        sample = data[..., 0]
        a_ref = compute_a(b, sample, 0)
        wh_ref = m_step_wh(b, data, post, 0)
        for n in range(1, 3):
            worst = max(worst, rel(compute_a(b, sample, n), a_ref), rel(m_step_wh(b, data, post, n), wh_ref))
        direct = np.tensordot(materialize(b), sample, axes=(list(range(3)), list(range(3))))
        worst = max(worst, rel(a_ref, direct))
    ok = worst <= 1e-9
    _verdict(acceptance_log, 6, ok, f"compute_a and m_step_wh across modes: max rel {worst:.2e} (<=1e-9)")


def _per_iteration_seconds(dims, m, k=10, r=10, iters=12, reps=5):
    data = np.random.default_rng(SEED).standard_normal(tuple(dims) + (m,))
    config = ModelConfig(k=k, r=r, tol=1e-300, max_iters=iters)
    samples = []
    for _ in range(reps):
        _, report = fit(data, config)
        samples.append(np.median(np.diff([0.0] + report.seconds_trace)))
    return min(samples)


def test_ac7_complexity_scaling(acceptance_log):
    start = time.perf_counter()
    base = _per_iteration_seconds((64, 64), 200)
    double_m = _per_iteration_seconds((64, 64), 400) / base
    double_d = _per_iteration_seconds((128, 64), 200) / base
    seconds = time.perf_counter() - start
    ok = 1.5 <= double_m <= 3.0 and 1.5 <= double_d <= 3.0 and seconds < 60
    _verdict(
        acceptance_log, 7, ok,
        f"per-iteration time ratio: 2xM {double_m:.2f}, 2xprod(D) {double_d:.2f} (in [1.5, 3.0]), {seconds:.1f}s (<60s)",
    )


def test_ac8_end_to_end_classification(acceptance_log):
    spec = SynthSpec(dims=(8, 6), k=4, r=4, m=120, sigma=0.1, seed=SEED, class_count=2, class_separation=6.0)
    data, _, _, labels = generate(spec)
    train = np.arange(120) % 4 < 2
    model, report = fit(data[..., train], ModelConfig(k=4, r=4))
    train_set = LabeledFeatures(report.posterior.u.T, labels[train])
    rate = recognition_rate(knn1_classify(train_set, transform(model, data[..., ~train]).T), labels[~train])
    clusters = kmeans(transform(model, data).T, 2, seed=0)
    ac, score = cluster_accuracy(clusters, labels), nmi(clusters, labels)
    ok = rate >= 0.95 and ac >= 0.95 and score >= 0.8
    _verdict(acceptance_log, 8, ok, f"1-NN rate {rate:.4f} (>=0.95), k-means AC {ac:.4f} (>=0.95), NMI {score:.4f} (>=0.8)")


def _yale_check():
    data = io.load_tensor(os.environ["TBVDR_YALE"])
    labels = io.load_labels(os.environ["TBVDR_YALE_LABELS"])
    splits = int(os.environ.get("TBVDR_YALE_SPLITS", "3"))
    rng = np.random.default_rng(SEED)
    rates, qualities = [], []
    for s in range(splits):
        train = np.zeros(labels.size, bool)
        for c in np.unique(labels):
            train[rng.permutation(np.flatnonzero(labels == c))[:40]] = True
        model, report = fit(data[..., train], ModelConfig(k=50, r=50, seed=SEED + s))
        train_set = LabeledFeatures(report.posterior.u.T, labels[train])
        pred = knn1_classify(train_set, transform(model, data[..., ~train]).T)
        rates.append(recognition_rate(pred, labels[~train]))
        qualities.append(report.e_trace[-1])
    rate, quality = float(np.mean(rates)), float(np.mean(qualities))
    ok = abs(rate - 0.8371) <= 0.05 and abs(quality - 0.80) <= 0.03
    return ok, f"Yale R=K=50: rate {rate:.4f} (0.8371+-0.05), e {quality:.4f} (0.80+-0.03)"


def _berkeley_check():
    data = io.load_tensor(os.environ["TBVDR_BERKELEY"])
    k = int(os.environ.get("TBVDR_BERKELEY_K", "10"))
    model, report = fit(data, ModelConfig(k=k, r=k))
    ours = (w_matrix(model.basis) @ report.posterior.u).reshape(data.shape)
    cp = cp_als(data, k, seed=SEED).full()
    wins = 0
    parts = []
    for i in range(data.shape[1]):
        a = relative_recon_error(data[:, i, :], ours[:, i, :])
        b = relative_recon_error(data[:, i, :], cp[:, i, :])
        wins += a < b
        parts.append(f"{a:.3g}/{b:.3g}")
    ok = wins >= 3
    return ok, f"Berkeley K=R={k}: TBV-DR/CP per slice {' '.join(parts)}; wins {wins} (>=3)"


def test_ac9_dataset_reproduction(acceptance_log):
    results = []
    if os.environ.get("TBVDR_YALE") and os.environ.get("TBVDR_YALE_LABELS"):
        results.append(_yale_check())
    if os.environ.get("TBVDR_BERKELEY"):
        results.append(_berkeley_check())
    if not results:
        acceptance_log("SKIP AC9 dataset reproduction: set TBVDR_YALE/TBVDR_YALE_LABELS or TBVDR_BERKELEY")
        pytest.skip("external datasets not supplied")
    ok = all(r[0] for r in results)
    _verdict(acceptance_log, 9, ok, "; ".join(r[1] for r in results))
