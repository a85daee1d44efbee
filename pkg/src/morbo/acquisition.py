"""Sequential-greedy batch selection with hypervolume-improvement Thompson sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .candidates import gen_candidates
from .errors import LifecycleError
from .pareto import ParetoState, hvi_per_point
from .surrogate import GPModel, RFFPosterior, eval_rff, sample_joint
from .trust_region import TrustRegion, total_violation

CandidateFn = Callable[[TrustRegion, int], np.ndarray]
DrawFn = Callable[[TrustRegion, np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class PendingPoint:
    """A selected, not yet evaluated point and the sample it was chosen under."""

    x: np.ndarray
    sampled_objectives: np.ndarray
    sampled_constraints: np.ndarray
    source_tr: int
    value: float = math.nan

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.sampled_constraints <= 0.0))


def _score(sampled_F, sampled_C, pending_F, front, ref_point) -> np.ndarray:
    F = np.asarray(sampled_F, dtype=float)
    m = F.shape[1] if F.ndim == 2 else len(ref_point)
    C = np.asarray(sampled_C, dtype=float).reshape(F.shape[0], -1)
    base = np.vstack([np.asarray(front, dtype=float).reshape(-1, m), np.asarray(pending_F, dtype=float).reshape(-1, m)])
    values = hvi_per_point(F, base, ref_point)
    viol = total_violation(C)
    infeasible = np.any(C > 0.0, axis=1)
    values[infeasible] = -viol[infeasible]
    return values


def score_candidates(sampled_F, sampled_C, pending: Sequence[PendingPoint], state: ParetoState) -> np.ndarray:
    """Acquisition value of each candidate under one posterior sample.

    Feasible candidates score their hypervolume improvement over the front
    augmented with the feasible pending points; infeasible ones score the
    negative of their total sampled violation.
    """
    m = state.ref_point.shape[0]
    pend = [pp.sampled_objectives for pp in pending if pp.feasible]
    pending_F = np.asarray(pend, dtype=float).reshape(-1, m)
    return _score(sampled_F, sampled_C, pending_F, state.front, state.ref_point)


def model_draw_fn(
    models: Mapping[int, Sequence[GPModel]],
    sampler: str = "exact",
    num_features: int = 1024,
    seed=None,
) -> DrawFn:
    """Build a draw function sampling every outcome model of a region.

    ``sampler="exact"`` draws jointly from the GP posterior; ``"rff"`` uses a
    random Fourier basis drawn once per model, with fresh weights per call.
    """
    if sampler == "exact":

        def draw(tr, X, rng):
            return np.column_stack([sample_joint(mdl, X, rng, 1)[0] for mdl in models[tr.id]])

        return draw

    if sampler != "rff":
        raise ValueError(f"unknown sampler {sampler!r}")
    cache: dict[int, RFFPosterior] = {}

    def draw_rff_fn(tr, X, rng):
        cols = []
        for k, mdl in enumerate(models[tr.id]):
            key = id(mdl)
            if key not in cache:
                cache[key] = RFFPosterior(mdl, num_features, np.random.SeedSequence([*_entropy(seed), tr.id, k, 7]))
            cols.append(eval_rff(cache[key].draw(rng), X))
        return np.column_stack(cols)

    return draw_rff_fn


def _entropy(seed) -> list[int]:
    if seed is None:
        return [0]
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def select_batch(
    regions: Sequence[TrustRegion],
    models: Mapping[int, Sequence[GPModel]] | None,
    state: ParetoState,
    q: int,
    r: int,
    p: float,
    seed,
    *,
    base_points: Mapping[int, np.ndarray] | None = None,
    pending: Sequence[PendingPoint] = (),
    sampler: str = "exact",
    num_features: int = 1024,
    candidate_fn: CandidateFn | None = None,
    draw_fn: DrawFn | None = None,
    log: list | None = None,
) -> list[PendingPoint]:
    """Select ``q`` points one at a time, each conditioned on those before it.

    At every greedy step each region draws a fresh candidate set and one
    joint posterior sample over its candidates plus its own pending points.
    Candidates are scored against the global front and all pending points
    (other regions' pending points enter with their stored sampled values).
    The best candidate across regions wins the slot; ties go to the lower
    region id, then the lower candidate index.

    ``pending`` holds points selected earlier and still awaiting evaluation;
    they condition the selection but are not part of the returned list.
    """
    active = [tr for tr in regions if tr.active]
    if not active:
        raise LifecycleError("select_batch needs at least one active trust region")
    active.sort(key=lambda tr: tr.id)
    m = state.ref_point.shape[0]
    entropy = _entropy(seed)
    if draw_fn is None:
        draw_fn = model_draw_fn(models, sampler, num_features, entropy)
    if candidate_fn is None:
        base_points = base_points or {}

        def candidate_fn(tr, step):
            ss = np.random.SeedSequence([*entropy, step, tr.id, 1])
            return gen_candidates(tr, base_points.get(tr.id), r, p, ss)

    all_pending = list(pending)
    chosen: list[PendingPoint] = []
    for step in range(q):
        best = None
        best_feasible = -math.inf
        for tr in active:
            Xc = candidate_fn(tr, step)
            own = [pp for pp in all_pending if pp.source_tr == tr.id]
            others = [pp for pp in all_pending if pp.source_tr != tr.id and pp.feasible]
            Xjoint = np.vstack([Xc] + [pp.x[None, :] for pp in own])
            rng = np.random.default_rng(np.random.SeedSequence([*entropy, step, tr.id, 2]))
            S = np.asarray(draw_fn(tr, Xjoint, rng), dtype=float)
            nc = Xc.shape[0]
            F, C = S[:nc, :m], S[:nc, m:]
            own_F, own_C = S[nc:, :m], S[nc:, m:]
            own_ok = np.all(own_C <= 0.0, axis=1)
            pend_F = np.vstack([own_F[own_ok]] + [pp.sampled_objectives[None, :] for pp in others]).reshape(-1, m)
            values = _score(F, C, pend_F, state.front, state.ref_point)
            j = int(np.argmax(values))
            feas = np.all(C <= 0.0, axis=1)
            if feas.any():
                best_feasible = max(best_feasible, float(values[feas].max()))
            if best is None or values[j] > best[0]:
                best = (float(values[j]), tr, Xc[j], F[j], C[j], bool(feas[j]))
        value, tr, x, f, c, feasible = best
        pp = PendingPoint(np.array(x), np.array(f), np.array(c), tr.id, value)
        chosen.append(pp)
        all_pending.append(pp)
        if log is not None:
            log.append(
                {
                    "step": step,
                    "tr_id": tr.id,
                    "value": value,
                    "feasible": feasible,
                    "best_feasible_value": best_feasible if best_feasible > -math.inf else None,
                }
            )
    return chosen
