"""Discrete candidate sets for Thompson sampling inside a trust region."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import InvalidArgumentError, InvalidConfigError


def sobol(n: int, d: int, seed) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence in [0, 1]^d."""
    if n < 0 or d < 1:
        raise InvalidArgumentError(f"need n >= 0 and d >= 1, got n={n}, d={d}")
    if n == 0:
        return np.empty((0, d))
    engine = qmc.Sobol(d=d, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # balance properties only hold for powers of two; prefixes are fine here
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(n)


@dataclass(frozen=True)
class PerturbSchedule:
    n0: int
    nf: int
    d: int

    def __post_init__(self):
        if not (self.nf > self.n0 >= 1):
            raise InvalidConfigError(f"need nf > n0 >= 1, got n0={self.n0}, nf={self.nf}")
        if self.d < 1:
            raise InvalidConfigError("d must be >= 1")

    @property
    def p0(self) -> float:
        return min(20.0 / self.d, 1.0)

    @property
    def b(self) -> int:
        return self.nf - self.n0


def perturb_prob(n: int, sched: PerturbSchedule) -> float:
    """Probability of perturbing each dimension after ``n`` evaluations.

    Decays log-linearly from p0 right after the initial design to p0 / 2
    once the budget is spent.
    """
    b = sched.b
    if b < 2:
        raise InvalidConfigError(f"perturbation schedule needs nf - n0 >= 2, got {b}")
    n_prime = min(max(n - sched.n0, 1), b)
    return sched.p0 * (1.0 - 0.5 * math.log(n_prime) / math.log(b))


def gen_candidates(tr, base_points, r: int, p: float, seed) -> np.ndarray:
    """Perturb randomly chosen base points inside a trust region's box.

    Each candidate copies a uniformly drawn base point (the region center if
    there are none) and replaces each coordinate, with probability ``p``, by a
    scrambled-Sobol value mapped into the box. At least one coordinate is
    always replaced.

    Returns:
        ``r x d`` array of candidates, all inside the box.
    """
    lb, ub = tr.bounds
    d = lb.shape[0]
    if r < 1 or not (0.0 < p <= 1.0):
        raise InvalidArgumentError(f"need r >= 1 and 0 < p <= 1, got r={r}, p={p}")
    base = np.asarray(base_points, dtype=float).reshape(-1, d) if base_points is not None else np.empty((0, d))
    if base.shape[0] == 0:
        if tr.center is None:
            raise InvalidArgumentError("no base points and no center to perturb")
        base = np.asarray(tr.center, dtype=float).reshape(1, d)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sobol_seed, rng_seed = ss.spawn(2)
    rng = np.random.default_rng(rng_seed)
    pert = lb + (ub - lb) * sobol(r, d, np.random.default_rng(sobol_seed))
    mask = rng.random((r, d)) < p
    empty = np.flatnonzero(~mask.any(axis=1))
    if empty.size:
        mask[empty, rng.integers(0, d, size=empty.size)] = True
    X = base[rng.integers(0, base.shape[0], size=r)].copy()
    X[mask] = pert[mask]
    return np.clip(X, lb, ub)
