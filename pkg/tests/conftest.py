import numpy as np
import pytest

from tbvdr.model import CpBasis, LatentPosterior


def materialize(basis):
    """Projection tensor built from explicit outer products, shape dims + (K,)."""
    total = 0.0
    for r in range(basis.r):
        term = basis.factors[0][:, r]
        for f in list(basis.factors[1:]) + [basis.w_h]:
            term = np.multiply.outer(term, f[:, r])
        total = total + term
    return total


def w_matrix(basis):
    """``prod(dims) x K`` matrix whose column k is the flattened basis slice k."""
    return materialize(basis).reshape(-1, basis.k)


def vectorized_posterior(basis, rho, data):
    w = w_matrix(basis)
    y = data.reshape(-1, data.shape[-1])
    sigma = np.linalg.inv(np.eye(basis.k) + rho * w.T @ w)
    return rho * sigma @ w.T @ y, sigma


def vectorized_psi(basis, data, post):
    w = w_matrix(basis)
    y = data.reshape(-1, data.shape[-1])
    m = y.shape[1]
    return float(np.sum((y - w @ post.u) ** 2) + m * np.trace(w.T @ w @ post.sigma))


def random_basis(rng, dims, k, r, scale=1.0):
    return CpBasis(
        factors=tuple(rng.standard_normal((d, r)) * scale for d in dims),
        w_h=rng.standard_normal((k, r)) * scale,
    )


def random_posterior(rng, k, m):
    g = rng.standard_normal((k, k))
    sigma = np.linalg.inv(np.eye(k) + g @ g.T)
    return LatentPosterior(u=rng.standard_normal((k, m)), sigma=0.5 * (sigma + sigma.T))


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def perturbation_probe(objective, value, rng, trials=100):
    """Objective at ``value`` and its minimum over random sign perturbations of scale 1e-3."""
    base = objective(value)
    scale = 1e-3 * np.linalg.norm(value)
    worst = min(
        objective(value + scale * rng.choice([-1.0, 1.0], size=value.shape) * rng.random(value.shape))
        for _ in range(trials)
    )
    return base, worst


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL/SKIP line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(line):
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
