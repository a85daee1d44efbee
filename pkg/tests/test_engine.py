import numpy as np
import pytest

from morbo.engine import RunConfig, _Optimizer, run, run_sobol_baseline
from morbo.errors import EvaluationError, InvalidConfigError
from morbo.pareto import hypervolume, pareto_filter
from morbo.problems import ProblemSpec, get_problem
from morbo.record import RunRecord, hv_trace, load_record, record_paths, save_record
from morbo.trust_region import local_window, min_window_size

SMALL = dict(problem="dtlz2-10", n0=10, nf=40, q=5, n_trust_regions=2, r=64, seed=3, gp_restarts=2)


def small(**kw):
    return RunConfig(**(SMALL | kw))


@pytest.fixture(scope="module")
def small_run():
    return run(small())


def test_zero_iteration_budget():
    cfg = small(nf=10)
    rec = run(cfg)
    assert len(rec.observations) == 10
    assert hv_trace(rec) == [(10, rec.final_hv)]
    Y = rec.objectives()
    assert rec.final_hv == pytest.approx(hypervolume(Y[pareto_filter(Y)], rec.ref_point), abs=1e-12)


def test_observation_count_and_provenance(small_run):
    assert small_run.complete
    assert len(small_run.observations) == 40
    assert [o.index for o in small_run.observations] == list(range(40))
    assert all(o.iteration == 0 and o.tr_id == -1 for o in small_run.observations[:10])
    assert all(o.iteration >= 1 and o.tr_id in (0, 1) for o in small_run.observations[10:])


def test_trace_shape_and_monotone(small_run):
    trace = hv_trace(small_run)
    assert len(trace) == 1 + (40 - 10) // 5
    assert [n for n, _ in trace] == list(range(10, 41, 5))
    hvs = [hv for _, hv in trace]
    assert all(b >= a for a, b in zip(hvs, hvs[1:]))


def test_trace_recomputes_from_observations(small_run):
    for n, hv in hv_trace(small_run):
        assert small_run.recompute_hv(n) == pytest.approx(hv, abs=1e-9)


def test_runs_are_reproducible(small_run):
    again = run(small())
    assert again.deterministic_content() == small_run.deterministic_content()


def test_different_seeds_differ(small_run):
    other = run(small(seed=4))
    assert other.deterministic_content() != small_run.deterministic_content()


def test_record_round_trip_is_byte_identical(small_run, tmp_path):
    save_record(small_run, tmp_path / "a")
    loaded = load_record(tmp_path / "a")
    save_record(loaded, tmp_path / "b")
    for pa, pb in zip(record_paths(tmp_path / "a"), record_paths(tmp_path / "b")):
        assert pa.read_bytes() == pb.read_bytes()
    assert loaded.deterministic_content() == small_run.deterministic_content()


def test_load_missing_record(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_record(tmp_path / "nothing")


def test_initial_design_matches_problem_design(small_run):
    # the run's first points are the seeded Sobol design
    from morbo.engine import _design_seed
    from morbo.candidates import sobol

    p = get_problem("dtlz2-10")
    expected = p.to_raw(sobol(10, 10, _design_seed(3)))
    np.testing.assert_array_equal(small_run.inputs()[:10], expected)


def test_sobol_baseline_shares_initial_design(small_run):
    base = run_sobol_baseline(small())
    assert len(base.observations) == 40
    np.testing.assert_array_equal(base.inputs()[:10], small_run.inputs()[:10])
    assert [n for n, _ in hv_trace(base)] == [n for n, _ in hv_trace(small_run)]
    hvs = [hv for _, hv in hv_trace(base)]
    assert all(b >= a for a, b in zip(hvs, hvs[1:]))
    assert base.deterministic_content() == run_sobol_baseline(small()).deterministic_content()


def stepped_optimizer(cfg, problem=None):
    problem = problem or get_problem(cfg.problem)
    rec = RunRecord(config={"ref_point": problem.ref_point.tolist(), "problem": cfg.problem})
    opt = _Optimizer(cfg, problem, rec)
    opt.init_design()
    opt.init_regions()
    return opt


def sync_step(opt):
    opt.iteration += 1
    batch = opt.select(min(opt.config.q, opt.config.nf - opt.store.n))
    received = []
    for pp in batch:
        f, c = opt.store.evaluate_unit(pp.x)
        received.append((opt.store.add(pp.x, f, c, opt.iteration, pp.source_tr), pp.source_tr))
    opt.update_regions(received)


def test_invariants_every_iteration():
    cfg = small(n_trust_regions=3, tau_fail=1, nf=45)
    opt = stepped_optimizer(cfg)
    while opt.store.n < cfg.nf:
        sync_step(opt)
        assert sum(tr.active for tr in opt.regions) == 3
        X, F, C, viol = opt.store.arrays()
        feas = np.flatnonzero(viol == 0)
        expected = sorted(map(tuple, F[feas][pareto_filter(F[feas])]))
        assert sorted(map(tuple, opt.store.state.front)) == expected
    kinds = {e["kind"] for e in opt.record.events}
    assert {"shrink", "init"} <= kinds


def test_foreign_observations_enter_windows():
    cfg = small(n_trust_regions=2, nf=30)
    opt = stepped_optimizer(cfg)
    while opt.store.n < cfg.nf:
        sync_step(opt)
    X, _, _, _ = opt.store.arrays()
    tr0 = opt.regions[0]
    window = local_window(X, tr0.center, tr0.length, min_window_size(10))
    sources = {opt.record.observations[i].tr_id for i in window}
    assert 1 in sources


def test_infeasible_phase_counts_violation_decrease():
    def raw(x):
        return np.array([x[0], x[1]]), np.array([1.0 + x[0]])

    problem = ProblemSpec("always-infeasible", 2, 2, 1, [[0, 1], [0, 1]], [-2.0, -2.0], raw)
    cfg = RunConfig(problem="always-infeasible", n0=4, nf=20, q=2, n_trust_regions=2, r=16, seed=0)
    opt = stepped_optimizer(cfg, problem)
    best = min(opt.store.viol)
    u = np.zeros(2)  # x0 = 0 gives the smallest possible violation
    f, c = opt.store.evaluate_unit(u)
    assert 1.0 + 0.0 < best
    idx = opt.store.add(u, f, c, 1, 0)
    opt.update_regions([(idx, 0)])
    assert opt.store.state.hv == 0.0
    assert opt.regions[0].success_count == 1
    assert opt.regions[1].failure_count == 1


def test_nonfinite_evaluations_are_infeasible():
    def raw(x):
        if x[0] > 0.5:
            return np.array([np.nan, 1.0]), np.empty(0)
        return np.array([x[0], 1 - x[0]]), np.empty(0)

    problem = ProblemSpec("holes", 2, 2, 0, [[0, 1], [0, 1]], [-2.0, -2.0], raw)
    rec = run(RunConfig(problem="holes", n0=6, nf=16, q=2, n_trust_regions=1, r=16, seed=1), problem)
    assert rec.complete
    bad = [o for o in rec.observations if not np.all(np.isfinite(o.objectives))]
    assert bad and all(o.violation > 0 and not o.feasible for o in bad)


def test_evaluation_failure_gives_partial_record():
    calls = {"n": 0}

    def raw(x):
        calls["n"] += 1
        if calls["n"] > 8:
            raise EvaluationError("simulator crashed")
        return np.array([x[0], 1 - x[0]]), np.empty(0)

    problem = ProblemSpec("flaky", 2, 2, 0, [[0, 1], [0, 1]], [-2.0, -2.0], raw)
    rec = run(RunConfig(problem="flaky", n0=6, nf=16, q=2, n_trust_regions=1, r=16, seed=1), problem)
    assert not rec.complete
    assert "simulator crashed" in rec.error
    assert len(rec.observations) == 8


def test_async_mode_completes_and_uses_fresh_data(monkeypatch):
    seen = []
    original = _Optimizer.select

    def checked(self, k, pending=()):
        result = original(self, k, pending)
        seen.append(self._models_n == self.store.n)
        return result

    monkeypatch.setattr(_Optimizer, "select", checked)
    rec = run(small(async_workers=3, nf=30))
    assert rec.complete
    assert len(rec.observations) == 30
    assert all(seen)
    hvs = [hv for _, hv in hv_trace(rec)]
    assert all(b >= a for a, b in zip(hvs, hvs[1:]))
    assert len(hvs) == 1 + (30 - 10) // 5


@pytest.mark.parametrize(
    "kw",
    [dict(n0=0), dict(nf=5), dict(q=0), dict(n_trust_regions=0), dict(sampler="nope"), dict(problem="")],
)
def test_config_validation(kw):
    with pytest.raises(InvalidConfigError):
        small(**kw).validate()


def test_rff_sampler_run():
    rec = run(small(sampler="rff", num_features=128, nf=20))
    assert rec.complete and len(rec.observations) == 20
