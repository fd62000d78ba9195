"""Seeded synthetic CMOT instances.

Randomness comes from numpy's Philox counter-based generator keyed by the
64-bit seed, so a seed reproduces an instance bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import Instance, cmot_marginal_blocks
from .tensor import outer

DEFAULT_MEANS = ((-2.0, 0.0, 0.0), (0.0, 2.0, 0.0), (2.0, 0.0, 2.0))


@dataclass(frozen=True)
class GenSpec:
    marginal_count: int
    sizes: tuple
    seed: int = 0
    means: tuple = DEFAULT_MEANS
    scales: tuple = field(default=(1.0, 1.0, 1.0))
    capacity_factor: float = 2.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) == 1:
            sizes = sizes * self.marginal_count
        object.__setattr__(self, "sizes", sizes)
        if self.marginal_count not in (2, 3):
            raise ValueError("marginal_count must be 2 or 3")
        if len(sizes) != self.marginal_count or min(sizes) < 1:
            raise ValueError("one positive size per marginal is required")
        if len(self.means) != len(self.scales) or not self.means:
            raise ValueError("mixture means and scales must pair up")
        if not self.capacity_factor > 1:
            raise ValueError("capacity_factor must exceed 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _marginal(rng, n):
    w = rng.random(n)
    while np.any(w == 0):  # open interval (0, 1)
        w = np.where(w == 0, rng.random(n), w)
    return w / np.sum(w)


def _points(rng, n, means, scales):
    means = np.asarray(means, dtype=float)
    scales = np.asarray(scales, dtype=float)
    comp = rng.integers(0, len(means), size=n)
    return means[comp] + scales[comp, None] * rng.standard_normal((n, means.shape[1]))


def _sqdist(P, Q):
    diff = P[:, None, :] - Q[None, :, :]
    return np.sum(diff * diff, axis=-1)


def gen_cmot(spec: GenSpec):
    """Return ``(instance, x_ri)`` with ``x_ri`` the product of the marginals."""
    rng = _rng(spec.seed)
    margs = [_marginal(rng, n) for n in spec.sizes]
    pts = [_points(rng, n, spec.means, spec.scales) for n in spec.sizes]
    if spec.marginal_count == 2:
        C = _sqdist(pts[0], pts[1])[:, :, None]
        dims = spec.sizes + (1,)
    else:
        p, q, r = pts
        C = _sqdist(p, q)[:, :, None] + _sqdist(p, r)[:, None, :] + _sqdist(q, r)[None, :, :]
        dims = spec.sizes
    top = np.max(C)
    if top > 0:  # a single support point gives C == 0
        C = C / top
    x_ri = outer(*margs)
    blocks = cmot_marginal_blocks(dims)  # a third marginal of size 1 carries no constraint
    inst = Instance(C, blocks, margs[:len(blocks)], spec.capacity_factor * x_ri)
    return inst, x_ri
