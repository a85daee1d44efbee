"""The optimization loop: local models per trust region, greedy batches, updates."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .acquisition import PendingPoint, select_batch
from .candidates import PerturbSchedule, perturb_prob, sobol
from .errors import InvalidConfigError
from .pareto import ParetoState, hvi_per_point
from .problems import ProblemSpec, evaluate, external_problem, get_problem
from .record import Observation, RunRecord, hv_trace
from .surrogate import GPModel, default_hyperparams, fit_gp
from .trust_region import (
    TRDefaults,
    adjust_length,
    local_window,
    min_window_size,
    new_trust_region,
    record_batch_outcome,
    select_centers,
    total_violation,
)

__all__ = ["RunConfig", "run", "run_sobol_baseline", "hv_trace", "resolve_problem"]

log = logging.getLogger(__name__)

# violation assigned to evaluations that return non-finite values
NONFINITE_VIOLATION = 1e12
IMPROVEMENT_EPS = 1e-12


@dataclass(frozen=True)
class RunConfig:
    problem: str = "dtlz2-10"
    n0: int = 20
    nf: int = 120
    q: int = 10
    n_trust_regions: int = 5
    r: int = 4096
    sampler: str = "exact"  # "exact" or "rff"
    num_features: int = 1024
    seed: int = 0
    async_workers: int = 1
    length_init: float = 0.8
    length_max: float = 1.6
    length_min: float = 0.01
    tau_succ: float = math.inf
    tau_fail: int | None = None  # None: max(10, ceil(d / 3))
    window_min: int | None = None  # None: min(250, 2d)
    window_cap: int | None = None
    gp_restarts: int = 5
    gp_warm_restarts: int = 1
    gp_maxiter: int = 100
    noise_variance: float = 1e-6
    output_dir: str | None = None
    # external problem: command, d, M, C, lower, upper, ref_point (raw, minimized)
    external: dict | None = None

    def validate(self) -> "RunConfig":
        if not self.problem:
            raise InvalidConfigError("missing required field 'problem'")
        if self.n0 < 1:
            raise InvalidConfigError("n0 must be >= 1")
        if self.nf < self.n0:
            raise InvalidConfigError(f"nf ({self.nf}) must be >= n0 ({self.n0})")
        if self.q < 1:
            raise InvalidConfigError("q must be >= 1")
        if self.n_trust_regions < 1:
            raise InvalidConfigError("n_trust_regions must be >= 1")
        if self.r < 1:
            raise InvalidConfigError("r must be >= 1")
        if self.sampler not in ("exact", "rff"):
            raise InvalidConfigError(f"sampler must be 'exact' or 'rff', got {self.sampler!r}")
        if self.sampler == "rff" and self.num_features < 1:
            raise InvalidConfigError("num_features must be >= 1")
        if self.async_workers < 1:
            raise InvalidConfigError("async_workers must be >= 1")
        if not (0 < self.length_min <= self.length_init <= self.length_max):
            raise InvalidConfigError("need 0 < length_min <= length_init <= length_max")
        if self.tau_fail is not None and self.tau_fail < 1:
            raise InvalidConfigError("tau_fail must be >= 1")
        if self.tau_succ < 1:
            raise InvalidConfigError("tau_succ must be >= 1")
        if self.gp_restarts < 1 or self.gp_warm_restarts < 1:
            raise InvalidConfigError("GP restart counts must be >= 1")
        return self

    def tr_defaults(self) -> TRDefaults:
        return TRDefaults(
            length_init=self.length_init,
            length_max=self.length_max,
            length_min=self.length_min,
            n_trust_regions=self.n_trust_regions,
            tau_succ=self.tau_succ,
            tau_fail=self.tau_fail,
        )

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def resolve_problem(config: RunConfig) -> ProblemSpec:
    if config.problem == "external" or config.external:
        ext = config.external or {}
        try:
            d, m, c = int(ext["d"]), int(ext["M"]), int(ext["C"])
            bounds = np.column_stack([ext["lower"], ext["upper"]]).astype(float)
            return external_problem(config.problem, ext["command"], d, m, c, bounds, ext["ref_point"])
        except KeyError as exc:
            raise InvalidConfigError(f"external problem is missing field {exc.args[0]!r}") from None
    return get_problem(config.problem)


def _config_snapshot(config: RunConfig, problem: ProblemSpec) -> dict:
    snap = asdict(config)
    snap["problem_info"] = {
        "name": problem.name,
        "d": problem.d,
        "M": problem.M,
        "C": problem.C,
        "bounds": problem.bounds.tolist(),
    }
    snap["ref_point"] = problem.ref_point.tolist()
    return snap


def _design_seed(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0]))


class _Store:
    """Observation store plus the global Pareto state (single writer)."""

    def __init__(self, problem: ProblemSpec, record: RunRecord):
        self.problem = problem
        self.record = record
        self.U: list[np.ndarray] = []  # unit-cube inputs
        self.F: list[np.ndarray] = []
        self.Cons: list[np.ndarray] = []
        self.viol: list[float] = []
        self.state = ParetoState(problem.ref_point)

    @property
    def n(self) -> int:
        return len(self.U)

    def evaluate_unit(self, u: np.ndarray):
        return evaluate(self.problem, self.problem.to_raw(u))

    def add(self, u, f, c, iteration: int, tr_id: int) -> int:
        u = np.asarray(u, dtype=float)
        f = np.asarray(f, dtype=float)
        c = np.asarray(c, dtype=float)
        finite = bool(np.all(np.isfinite(f)) and np.all(np.isfinite(c)))
        v = float(total_violation(c[None, :])[0]) if finite else NONFINITE_VIOLATION
        idx = self.n
        self.U.append(u)
        self.F.append(f)
        self.Cons.append(c)
        self.viol.append(v)
        x_raw = self.problem.to_raw(u)
        self.record.observations.append(
            Observation(idx, iteration, tr_id, tuple(map(float, x_raw)), tuple(map(float, f)), tuple(map(float, c)), v)
        )
        if finite and v == 0.0:
            self.state.insert(f, idx)
        return idx

    def arrays(self):
        n = self.n
        return (
            np.array(self.U).reshape(n, self.problem.d),
            np.array(self.F).reshape(n, self.problem.M),
            np.array(self.Cons).reshape(n, self.problem.C),
            np.array(self.viol),
        )

    def finite_mask(self) -> np.ndarray:
        _, F, C, _ = self.arrays()
        return np.all(np.isfinite(F), axis=1) & np.all(np.isfinite(C), axis=1)


class _Optimizer:
    def __init__(self, config: RunConfig, problem: ProblemSpec, record: RunRecord):
        self.config = config
        self.problem = problem
        self.record = record
        self.store = _Store(problem, record)
        self.defaults = config.tr_defaults()
        self.regions = []
        self.iteration = 0
        self.calls = 0
        self._hp: dict[tuple[int, int], object] = {}
        self.models: dict[int, list[GPModel]] = {}
        self._models_n = -1
        self._boundary_state: ParetoState | None = None
        self._boundary_min_viol = math.inf
        self.schedule = PerturbSchedule(config.n0, config.nf, problem.d) if config.nf - config.n0 >= 2 else None

    # -- bookkeeping --------------------------------------------------

    def _event(self, kind: str, tr, **extra):
        self.record.events.append(
            {
                "iteration": self.iteration,
                "tr_id": int(tr.id),
                "kind": kind,
                "length": float(tr.length),
                "center_index": int(tr.center_index),
                **extra,
            }
        )

    def _time(self, phase: str, seconds: float):
        self.record.timings[phase] = self.record.timings.get(phase, 0.0) + seconds

    def mark_boundary(self):
        self._boundary_state = self.store.state.copy()
        self._boundary_min_viol = min(self.store.viol) if self.store.viol else math.inf
        self.record.hv_history.append((self.store.n, float(self.store.state.hv)))

    # -- initialization -----------------------------------------------

    def init_design(self):
        U0 = sobol(self.config.n0, self.problem.d, _design_seed(self.config.seed))
        for u in U0:
            f, c = self.store.evaluate_unit(u)
            self.store.add(u, f, c, 0, -1)

    def init_regions(self):
        X, F, _, viol = self.store.arrays()
        centers = select_centers(X, F, viol, self.problem.ref_point, [None] * self.config.n_trust_regions)
        for j, ci in enumerate(centers):
            tr = new_trust_region(j, X[ci], self.problem.d, self.defaults, ci)
            self.regions.append(tr)
            self._event("init", tr)
        self.mark_boundary()

    # -- modelling and selection --------------------------------------

    def fit_models(self):
        if self._models_n == self.store.n:
            return
        t0 = time.perf_counter()
        X, F, C, _ = self.store.arrays()
        finite = np.flatnonzero(self.store.finite_mask())
        targets = np.hstack([F, C])
        n_min = self.config.window_min if self.config.window_min is not None else min_window_size(self.problem.d)
        cache: dict[tuple, GPModel] = {}
        models = {}
        for tr in self.regions:
            if finite.size:
                local = local_window(X[finite], tr.center, tr.length, n_min, self.config.window_cap)
                idx = finite[local]
            else:
                idx = finite
            outs = []
            for k in range(targets.shape[1]):
                key = (idx.tobytes(), k)
                if key not in cache:
                    cache[key] = self._fit_one(tr.id, k, X[idx], targets[idx, k])
                outs.append(cache[key])
            models[tr.id] = outs
        self.models = models
        self._models_n = self.store.n
        self._time("fit", time.perf_counter() - t0)

    def _fit_one(self, tr_id: int, k: int, X: np.ndarray, y: np.ndarray) -> GPModel:
        cfg = self.config
        if X.shape[0] == 0:
            return GPModel.prior(default_hyperparams(self.problem.d, cfg.noise_variance))
        warm = self._hp.get((tr_id, k))
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, self.iteration, self.calls, tr_id, k]))
        model = fit_gp(
            X,
            y,
            rng=rng,
            num_restarts=cfg.gp_restarts if warm is None else cfg.gp_warm_restarts,
            warm_start=warm,
            noise_variance=cfg.noise_variance,
            maxiter=cfg.gp_maxiter,
        )
        self._hp[(tr_id, k)] = model.hyperparams
        return model

    def perturbation(self) -> float:
        if self.schedule is None:
            return min(20.0 / self.problem.d, 1.0)
        return perturb_prob(self.store.n, self.schedule)

    def base_points(self) -> dict[int, np.ndarray]:
        X, _, _, _ = self.store.arrays()
        front_x = X[self.store.state.origin] if self.store.state.origin.size else np.empty((0, self.problem.d))
        return {tr.id: front_x[tr.contains(front_x)] if front_x.size else front_x for tr in self.regions}

    def select(self, k: int, pending=()) -> list[PendingPoint]:
        self.fit_models()
        t0 = time.perf_counter()
        acq_log: list[dict] = []
        batch = select_batch(
            self.regions,
            self.models,
            self.store.state,
            k,
            self.config.r,
            self.perturbation(),
            [self.config.seed, 1, self.iteration, self.calls],
            base_points=self.base_points(),
            pending=pending,
            sampler=self.config.sampler,
            num_features=self.config.num_features,
            log=acq_log,
        )
        for entry in acq_log:
            entry["iteration"] = self.iteration
            entry["call"] = self.calls
        self.record.acquisition_log.extend(acq_log)
        self.calls += 1
        self._time("select", time.perf_counter() - t0)
        return batch

    # -- trust-region updates -----------------------------------------

    def update_regions(self, received: list[tuple[int, int]]):
        """Apply counters and length rules for one group of ``(obs index, tr id)``."""
        t0 = time.perf_counter()
        X, F, _, viol = self.store.arrays()
        before = self._boundary_state
        still_zero = self.store.state.hv == 0.0
        for j, tr in enumerate(self.regions):
            mine = [i for i, t in received if t == tr.id]
            improved = False
            if mine:
                feas = [i for i in mine if viol[i] == 0.0 and np.all(np.isfinite(F[i]))]
                if feas:
                    gains = hvi_per_point(F[feas], before.front, before.ref_point)
                    improved = bool(np.any(gains > IMPROVEMENT_EPS))
                if not improved and still_zero:
                    improved = bool(min(viol[i] for i in mine) < self._boundary_min_viol)
            updated = adjust_length(record_batch_outcome(tr, improved))
            if updated.length < tr.length:
                self._event("shrink", updated)
            elif updated.length > tr.length:
                self._event("expand", updated)
            if not updated.active:
                self._event("terminate", updated)
            self.regions[j] = updated
        self._recenter(X, F, viol)
        self.mark_boundary()
        self._time("update", time.perf_counter() - t0)

    def _recenter(self, X, F, viol):
        slots = [tr if tr.active else None for tr in self.regions]
        centers = select_centers(X, F, viol, self.problem.ref_point, slots)
        for j, (tr, ci) in enumerate(zip(self.regions, centers)):
            if not tr.active:
                fresh = new_trust_region(tr.id, X[ci], self.problem.d, self.defaults, ci)
                self.regions[j] = fresh
                for k in range(self.problem.M + self.problem.C):
                    self._hp.pop((tr.id, k), None)
                self._event("reinit", fresh)
            elif ci != tr.center_index:
                self.regions[j] = replace(tr, center=X[ci].copy(), center_index=ci)
                self._event("center_move", self.regions[j])


def _new_record(config: RunConfig, problem: ProblemSpec, method: str) -> RunRecord:
    return RunRecord(config=_config_snapshot(config, problem), method=method)


def _fail(record: RunRecord, exc: BaseException):
    record.complete = False
    record.error = f"{type(exc).__name__}: {exc}"
    log.error("run aborted: %s", record.error)


def run(config: RunConfig, problem: ProblemSpec | None = None) -> RunRecord:
    """Run the optimizer to completion; evaluation failures yield a partial record."""
    config.validate()
    problem = problem or resolve_problem(config)
    record = _new_record(config, problem, "morbo")
    opt = _Optimizer(config, problem, record)
    t_start = time.perf_counter()
    try:
        t0 = time.perf_counter()
        opt.init_design()
        opt._time("evaluate", time.perf_counter() - t0)
        opt.init_regions()
        if config.async_workers == 1:
            _run_sync(opt)
        else:
            _run_async(opt)
    except Exception as exc:  # noqa: BLE001 - any failure inside evaluation aborts the run
        if isinstance(exc, InvalidConfigError):
            raise
        _fail(record, exc)
    finally:
        record.timings["total"] = time.perf_counter() - t_start
        closer = getattr(getattr(problem, "evaluator", None), "close", None)
        if closer is not None:
            closer()
    return record


def _run_sync(opt: _Optimizer):
    cfg = opt.config
    while opt.store.n < cfg.nf:
        opt.iteration += 1
        k = min(cfg.q, cfg.nf - opt.store.n)
        batch = opt.select(k)
        t0 = time.perf_counter()
        received = []
        for pp in batch:
            f, c = opt.store.evaluate_unit(pp.x)
            received.append((opt.store.add(pp.x, f, c, opt.iteration, pp.source_tr), pp.source_tr))
        opt._time("evaluate", time.perf_counter() - t0)
        opt.update_regions(received)


def _run_async(opt: _Optimizer):
    """Work-queue loop: idle workers get freshly selected points as soon as they free up."""
    cfg = opt.config
    in_flight: dict = {}
    received: list[tuple[int, int]] = []
    dispatched = opt.store.n
    opt.iteration = 1
    with ThreadPoolExecutor(max_workers=cfg.async_workers) as pool:
        while opt.store.n < cfg.nf:
            free = min(cfg.async_workers - len(in_flight), cfg.nf - dispatched)
            if free > 0:
                batch = opt.select(free, pending=list(in_flight.values()))
                for pp in batch:
                    in_flight[pool.submit(opt.store.evaluate_unit, pp.x)] = pp
                dispatched += len(batch)
            done, _ = wait(list(in_flight), return_when=FIRST_COMPLETED)
            for fut in [fu for fu in list(in_flight) if fu in done]:
                pp = in_flight.pop(fut)
                f, c = fut.result()
                received.append((opt.store.add(pp.x, f, c, opt.iteration, pp.source_tr), pp.source_tr))
                if len(received) == cfg.q:
                    opt.update_regions(received)
                    received = []
                    opt.iteration += 1
        if received:
            opt.update_regions(received)


def run_sobol_baseline(config: RunConfig, problem: ProblemSpec | None = None) -> RunRecord:
    """Evaluate the first ``nf`` points of the run's scrambled Sobol stream.

    The first ``n0`` points coincide with the optimizer's initial design.
    The hypervolume history uses the same batch boundaries as a synchronous run.
    """
    config.validate()
    problem = problem or resolve_problem(config)
    record = _new_record(config, problem, "sobol")
    store = _Store(problem, record)
    t_start = time.perf_counter()
    try:
        U = sobol(config.nf, problem.d, _design_seed(config.seed))
        for i, u in enumerate(U):
            iteration = 0 if i < config.n0 else 1 + (i - config.n0) // config.q
            f, c = store.evaluate_unit(u)
            store.add(u, f, c, iteration, -1)
            used = i + 1
            if used == config.n0 or (used > config.n0 and ((used - config.n0) % config.q == 0 or used == config.nf)):
                record.hv_history.append((used, float(store.state.hv)))
    except Exception as exc:  # noqa: BLE001
        _fail(record, exc)
    finally:
        record.timings["total"] = time.perf_counter() - t_start
        closer = getattr(getattr(problem, "evaluator", None), "close", None)
        if closer is not None:
            closer()
    return record
