"""Sampling from the generative model.

Draw order from a single ``numpy.random.default_rng(seed)`` stream:

1. factors ``W1 .. WN`` then ``Wh`` (standard normal times ``r ** -0.5``),
2. class mean directions (only when ``class_count > 1``),
3. latent codes ``H`` (K x M standard normal),
4. observation noise (only when ``sigma > 0``).

Labels are assigned round-robin, ``label_i = i % class_count``.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .model import CpBasis, ModelConfig, init_basis


@dataclass(frozen=True)
class SynthSpec:
    dims: Tuple[int, ...]
    k: int
    r: int
    m: int
    sigma: float = 0.0
    seed: Optional[int] = 0
    class_count: int = 1
    class_separation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.dims or min(self.dims) < 1:
            raise ValueError(f"invalid dims {self.dims}")
        if self.k < 1 or self.r < 1 or self.m < 1:
            raise ValueError("k, r and m must be at least 1")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.class_count < 1:
            raise ValueError("class_count must be at least 1")


def _class_means(rng, k, count, separation):
    if count <= k:
        q, _ = np.linalg.qr(rng.standard_normal((k, count)))
    else:
        q = rng.standard_normal((k, count))
        q /= np.linalg.norm(q, axis=0)
    return separation * q


def generate(spec):
    """Return ``(data, basis, h, labels)`` with ``data`` of shape ``dims + (m,)``."""
    rng = np.random.default_rng(spec.seed)
    basis: CpBasis = init_basis(spec.dims, ModelConfig(k=spec.k, r=spec.r), rng)
    labels = np.arange(spec.m) % spec.class_count
    offsets = np.zeros((spec.k, spec.m))
    if spec.class_count > 1:
        means = _class_means(rng, spec.k, spec.class_count, spec.class_separation)
        offsets = means[:, labels]
    h = rng.standard_normal((spec.k, spec.m)) + offsets

    w = basis.tensor().reshape(-1, spec.k)
    data = (w @ h).reshape(spec.dims + (spec.m,))
    if spec.sigma > 0:
        data = data + spec.sigma * rng.standard_normal(data.shape)
    return data, basis, h, labels
