"""Pareto domination, nondominated filtering and exact hypervolume.

All objectives follow the maximization convention. A point only contributes
volume where it strictly exceeds the reference point in every coordinate;
anything on or below the reference boundary has zero measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, UnsupportedError

SUPPORTED_NUM_OBJECTIVES = (2, 3, 4)

_CHUNK = 512


def _as_matrix(points, num_objectives: int | None = None) -> np.ndarray:
    Y = np.asarray(points, dtype=float)
    if Y.size == 0:
        m = num_objectives if num_objectives is not None else (Y.shape[-1] if Y.ndim == 2 else 0)
        return np.empty((0, m))
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D array of objective vectors, got shape {Y.shape}")
    return Y


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """Return True iff ``a`` Pareto-dominates ``b`` (maximization)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


def nondominated_mask(points) -> np.ndarray:
    """Boolean mask of rows not dominated by any other row.

    Exact duplicates do not dominate each other, so every copy of a
    nondominated point is kept.
    """
    Y = _as_matrix(points)
    n = Y.shape[0]
    mask = np.ones(n, dtype=bool)
    for start in range(0, n, _CHUNK):
        block = Y[start : start + _CHUNK]
        # ge[i, j]: Y[i] >= block[j] everywhere; gt[i, j]: strictly somewhere
        ge = np.all(Y[:, None, :] >= block[None, :, :], axis=-1)
        gt = np.any(Y[:, None, :] > block[None, :, :], axis=-1)
        mask[start : start + _CHUNK] = ~np.any(ge & gt, axis=0)
    return mask


def pareto_filter(points) -> np.ndarray:
    """Indices (ascending) of the nondominated points."""
    return np.flatnonzero(nondominated_mask(points))


def _clip_to_ref(Y: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return Y[np.all(Y > ref, axis=1)]


def _hv2d(Y: np.ndarray, ref: np.ndarray) -> float:
    # Y already strictly above ref. Sweep along the first objective.
    if Y.shape[0] == 0:
        return 0.0
    order = np.lexsort((-Y[:, 1], -Y[:, 0]))
    a = Y[order, 0]
    b = Y[order, 1]
    height = np.maximum.accumulate(b)
    widths = a - np.append(a[1:], ref[0])
    return float(np.sum(widths * (height - ref[1])))


def _hv_recursive(Y: np.ndarray, ref: np.ndarray) -> float:
    m = Y.shape[1]
    if Y.shape[0] == 0:
        return 0.0
    if m == 2:
        return _hv2d(Y, ref)
    # Slice along the last objective, from the top down.
    order = np.argsort(-Y[:, -1], kind="stable")
    Ys = Y[order]
    z = Ys[:, -1]
    z_next = np.append(z[1:], ref[-1])
    total = 0.0
    for i in range(Ys.shape[0]):
        depth = z[i] - z_next[i]
        if depth <= 0.0:
            continue
        prefix = Ys[: i + 1, :-1]
        if prefix.shape[0] > 1:
            prefix = prefix[nondominated_mask(prefix)]
        total += depth * _hv_recursive(prefix, ref[:-1])
    return total


def hypervolume(front, ref) -> float:
    """Exact hypervolume dominated by ``front`` and bounded below by ``ref``.

    Uses a dimension sweep for two objectives and recursive slicing along
    the last objective for three or four.
    """
    ref = np.asarray(ref, dtype=float).ravel()
    m = ref.shape[0]
    if m not in SUPPORTED_NUM_OBJECTIVES:
        raise UnsupportedError(f"exact hypervolume supports M in {SUPPORTED_NUM_OBJECTIVES}, got M={m}")
    Y = _as_matrix(front, m)
    if Y.shape[0] == 0:
        return 0.0
    if Y.shape[1] != m:
        raise InvalidArgumentError(f"front has {Y.shape[1]} objectives but ref has {m}")
    Y = _clip_to_ref(Y, ref)
    if Y.shape[0] > 1:
        Y = Y[nondominated_mask(Y)]
    return _hv_recursive(Y, ref)


def hv_contributions(front, ref) -> np.ndarray:
    """Exclusive hypervolume contribution of each member of a nondominated front.

    Raises:
        InvalidArgumentError: if any member is dominated by another.
    """
    ref = np.asarray(ref, dtype=float).ravel()
    m = ref.shape[0]
    if m not in SUPPORTED_NUM_OBJECTIVES:
        raise UnsupportedError(f"exact hypervolume supports M in {SUPPORTED_NUM_OBJECTIVES}, got M={m}")
    Y = _as_matrix(front, m)
    n = Y.shape[0]
    if n == 0:
        return np.empty(0)
    if not np.all(nondominated_mask(Y)):
        raise InvalidArgumentError("hv_contributions requires a nondominated front")
    contrib = np.zeros(n)
    above = np.all(Y > ref, axis=1)
    # A point with an exact copy elsewhere contributes nothing.
    _, inverse, counts = np.unique(Y, axis=0, return_inverse=True, return_counts=True)
    unique_pt = counts[inverse.ravel()] == 1
    live = np.flatnonzero(above & unique_pt)
    if live.size == 0:
        return contrib
    if m == 2:
        # Staircase over distinct above-ref points; duplicates keep shaping it.
        U = np.unique(Y[above], axis=0)
        U = U[np.argsort(-U[:, 0], kind="stable")]
        a = U[:, 0]
        b = U[:, 1]
        stair = (a - np.append(a[1:], ref[0])) * (b - np.insert(b[:-1], 0, ref[1]))
        for i in live:
            k = np.flatnonzero(np.all(U == Y[i], axis=1))[0]
            contrib[i] = stair[k]
        return contrib
    pts = Y[above]
    total = hypervolume(pts, ref)
    pos = {int(j): k for k, j in enumerate(np.flatnonzero(above))}
    for i in live:
        others = np.delete(pts, pos[int(i)], axis=0)
        contrib[i] = max(total - hypervolume(others, ref), 0.0)
    return contrib


def _hvi2d_many(C: np.ndarray, F: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # Staircase of the front: segment [lo, hi) of the first objective has
    # dominated height h; the gain of c is the area above h inside [ref, c].
    if F.shape[0]:
        F = F[nondominated_mask(F)]
        F = np.unique(F, axis=0)
        F = F[np.argsort(-F[:, 0], kind="stable")]
    a = F[:, 0]
    b = F[:, 1]
    lo = np.append(a, ref[0])
    hi = np.insert(a, 0, np.inf)
    h = np.insert(b, 0, ref[1])
    width = np.clip(np.minimum(C[:, :1], hi[None, :]) - lo[None, :], 0.0, None)
    tall = np.clip(C[:, 1:2] - h[None, :], 0.0, None)
    return np.sum(width * tall, axis=1)


def hvi_per_point(candidates, front, ref) -> np.ndarray:
    """Hypervolume improvement of each candidate added *alone* to ``front``."""
    ref = np.asarray(ref, dtype=float).ravel()
    m = ref.shape[0]
    if m not in SUPPORTED_NUM_OBJECTIVES:
        raise UnsupportedError(f"exact hypervolume supports M in {SUPPORTED_NUM_OBJECTIVES}, got M={m}")
    C = _as_matrix(candidates, m)
    F = _clip_to_ref(_as_matrix(front, m), ref)
    if C.shape[0] == 0:
        return np.empty(0)
    if m == 2:
        return _hvi2d_many(C, F, ref)
    out = np.zeros(C.shape[0])
    if F.shape[0] > 1:
        F = F[nondominated_mask(F)]
    for j, c in enumerate(C):
        if not np.all(c > ref):
            continue
        if F.shape[0] and np.any(np.all(F >= c, axis=1)):
            continue
        # HVI(c) = vol([ref, c]) - HV(front clipped at c)
        box = float(np.prod(c - ref))
        out[j] = max(box - hypervolume(np.minimum(F, c), ref), 0.0)
    return out


@dataclass
class ParetoState:
    """Global nondominated archive with cached hypervolume.

    ``front`` holds objective vectors of feasible observations and ``origin``
    the observation index each came from.
    """

    ref_point: np.ndarray
    front: np.ndarray = field(default=None)
    origin: np.ndarray = field(default=None)
    hv: float = 0.0

    def __post_init__(self):
        self.ref_point = np.asarray(self.ref_point, dtype=float).ravel()
        m = self.ref_point.shape[0]
        if self.front is None:
            self.front = np.empty((0, m))
            self.origin = np.empty(0, dtype=int)
        else:
            self.front = _as_matrix(self.front, m)
            self.origin = np.asarray(self.origin, dtype=int)
        self.hv = hypervolume(self.front, self.ref_point)

    @classmethod
    def from_points(cls, ref_point, points, origins: Iterable[int] | None = None) -> "ParetoState":
        Y = _as_matrix(points, len(np.ravel(ref_point)))
        idx = np.arange(Y.shape[0]) if origins is None else np.asarray(list(origins), dtype=int)
        keep = pareto_filter(Y)
        return cls(ref_point=ref_point, front=Y[keep], origin=idx[keep])

    def insert(self, y, origin: int) -> float:
        """Insert one objective vector; returns the resulting hypervolume gain."""
        y = np.asarray(y, dtype=float).ravel()
        if self.front.shape[0]:
            ge = np.all(self.front >= y, axis=1)
            gt = np.any(self.front > y, axis=1)
            if np.any(ge & gt):
                return 0.0
            dominated = np.all(y >= self.front, axis=1) & np.any(y > self.front, axis=1)
            self.front = self.front[~dominated]
            self.origin = self.origin[~dominated]
        self.front = np.vstack([self.front, y])
        self.origin = np.append(self.origin, origin)
        old = self.hv
        self.hv = hypervolume(self.front, self.ref_point)
        return max(self.hv - old, 0.0)

    def copy(self) -> "ParetoState":
        return ParetoState(self.ref_point.copy(), self.front.copy(), self.origin.copy())


def hvi(new_points, state: ParetoState) -> float:
    """Hypervolume gained by adding ``new_points`` to the state's front."""
    m = state.ref_point.shape[0]
    P = _as_matrix(new_points, m)
    if P.shape[0] == 0:
        return 0.0
    merged = np.vstack([state.front, P])
    return max(hypervolume(merged, state.ref_point) - state.hv, 0.0)
