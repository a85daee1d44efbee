"""Trust-region state machine, center selection and local data windows.

Everything here works in the normalized input space [0, 1]^d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, LifecycleError
from .pareto import hv_contributions, nondominated_mask


class Status(str, Enum):
    ACTIVE = "active"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class TRDefaults:
    length_init: float = 0.8
    length_max: float = 1.6
    length_min: float = 0.01
    n_trust_regions: int = 5
    tau_succ: float = math.inf
    tau_fail: int | None = None  # None -> max(10, ceil(d / 3))

    def failure_tolerance(self, dim: int) -> int:
        if self.tau_fail is not None:
            return int(self.tau_fail)
        return max(10, math.ceil(dim / 3))


@dataclass(frozen=True)
class TrustRegion:
    """An axis-aligned box of edge ``length`` around ``center``."""

    id: int
    center: np.ndarray
    length: float
    tau_succ: float
    tau_fail: int
    length_min: float = 0.01
    length_max: float = 1.6
    success_count: int = 0
    failure_count: int = 0
    status: Status = Status.ACTIVE
    center_index: int = -1

    @property
    def active(self) -> bool:
        return self.status is Status.ACTIVE

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners: center +/- L/2, clipped to the unit cube."""
        half = 0.5 * self.length
        return np.clip(self.center - half, 0.0, 1.0), np.clip(self.center + half, 0.0, 1.0)

    def contains(self, X) -> np.ndarray:
        lb, ub = self.bounds
        X = np.atleast_2d(X)
        return np.all((X >= lb) & (X <= ub), axis=1)


def new_trust_region(tr_id: int, center, dim: int, defaults: TRDefaults, center_index: int = -1) -> TrustRegion:
    return TrustRegion(
        id=tr_id,
        center=np.asarray(center, dtype=float).copy(),
        length=defaults.length_init,
        tau_succ=defaults.tau_succ,
        tau_fail=defaults.failure_tolerance(dim),
        length_min=defaults.length_min,
        length_max=defaults.length_max,
        center_index=center_index,
    )


def record_batch_outcome(tr: TrustRegion, improved: bool) -> TrustRegion:
    """Extend the success streak or the failure streak; the other resets."""
    if not tr.active:
        raise LifecycleError(f"trust region {tr.id} is terminated")
    if improved:
        return replace(tr, success_count=tr.success_count + 1, failure_count=0)
    return replace(tr, success_count=0, failure_count=tr.failure_count + 1)


def adjust_length(tr: TrustRegion) -> TrustRegion:
    """Expand after ``tau_succ`` successes, halve after ``tau_fail`` failures.

    A region whose length drops below ``length_min`` is terminated.
    """
    if not tr.active:
        raise LifecycleError(f"trust region {tr.id} is terminated")
    length = tr.length
    succ, fail = tr.success_count, tr.failure_count
    if succ >= tr.tau_succ:
        length = min(2.0 * length, tr.length_max)
        succ = fail = 0
    elif fail >= tr.tau_fail:
        length = length / 2.0
        succ = fail = 0
    status = Status.TERMINATED if length < tr.length_min else tr.status
    return replace(tr, length=length, success_count=succ, failure_count=fail, status=status)


def total_violation(constraints) -> np.ndarray:
    """Sum of positive parts of constraint values (``c <= 0`` is feasible)."""
    C = np.asarray(constraints, dtype=float)
    if C.ndim == 1:
        C = C[None, :]
    if C.shape[1] == 0:
        return np.zeros(C.shape[0])
    return np.sum(np.clip(C, 0.0, None), axis=1)


def _ranked(scores: np.ndarray, descending: bool) -> np.ndarray:
    # stable sort: ties go to the earliest observation
    key = -scores if descending else scores
    return np.argsort(key, kind="stable")


def select_centers(
    X,
    objectives,
    violations,
    ref_point,
    regions: Sequence[TrustRegion | None],
) -> list[int]:
    """Pick one observation index as center for each entry of ``regions``.

    ``regions[j]`` is the surviving trust region ``j`` (its center is then
    chosen among points inside it) or None when ``j`` needs a global center
    (initialization or reinitialization after termination). Regions are
    served in order and a chosen point becomes unavailable to later ones.

    Feasible Pareto points are ranked by hypervolume contribution. With no
    feasible observation at all, points are ranked by total violation.

    Raises:
        InvalidArgumentError: if there are no observations.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(objectives, dtype=float)
    viol = np.asarray(violations, dtype=float).ravel()
    n = X.shape[0]
    if n == 0:
        raise InvalidArgumentError("select_centers needs at least one observation")

    feasible = np.flatnonzero((viol <= 0.0) & np.all(np.isfinite(Y), axis=1))
    if feasible.size:
        front = feasible[nondominated_mask(Y[feasible])]
        hvc = hv_contributions(Y[front], ref_point)
        ranking = front[_ranked(hvc, descending=True)]
    else:
        ranking = _ranked(viol, descending=False)

    taken: set[int] = set()
    chosen: list[int] = []
    for region in regions:
        pick = None
        if region is None:
            pool = [i for i in ranking if i not in taken]
            if pool:
                pick = int(pool[0])
        else:
            inside = region.contains(X[ranking]) if ranking.size else np.zeros(0, bool)
            pool = [int(i) for i, ok in zip(ranking, inside) if ok and i not in taken]
            if not pool:
                # nothing available in the region: look in the 2L modelling window
                in_window = np.max(np.abs(X[ranking] - region.center), axis=1) <= region.length
                pool = [int(i) for i, ok in zip(ranking, in_window) if ok and i not in taken]
            if pool:
                pick = pool[0]
            elif region.center_index >= 0:
                pick = int(region.center_index)
        if pick is None:
            # everything is taken: reuse the best-ranked point
            pick = int(ranking[0])
        taken.add(pick)
        chosen.append(pick)
    return chosen


def min_window_size(dim: int) -> int:
    return min(250, 2 * dim)


def local_window(X, center, length: float, n_min: int | None = None, n_cap: int | None = None) -> np.ndarray:
    """Indices of observations used to fit a trust region's models.

    Takes points within the hypercube of edge ``2 * length`` around the
    center. If that holds fewer than ``n_min`` points the ``n_min`` nearest
    (Euclidean) are used instead; more than ``n_cap`` are trimmed to the
    nearest ``n_cap``. Distance ties break by input index. The result is
    sorted ascending.
    """
    if length <= 0:
        raise InvalidArgumentError("length must be positive")
    X = np.asarray(X, dtype=float)
    center = np.asarray(center, dtype=float)
    n = X.shape[0]
    if n == 0:
        return np.empty(0, dtype=int)
    if n_min is None:
        n_min = min_window_size(X.shape[1])
    inside = np.flatnonzero(np.max(np.abs(X - center), axis=1) <= length)
    dist = np.sqrt(np.sum((X - center) ** 2, axis=1))
    if inside.size < n_min:
        k = min(n, n_min)
        order = np.lexsort((np.arange(n), dist))
        return np.sort(order[:k])
    if n_cap is not None and inside.size > n_cap:
        order = inside[np.lexsort((inside, dist[inside]))]
        return np.sort(order[:n_cap])
    return inside
