import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from morbo.acquisition import PendingPoint, score_candidates, select_batch
from morbo.errors import LifecycleError
from morbo.pareto import ParetoState
from morbo.surrogate import fit_gp
from morbo.trust_region import TRDefaults, new_trust_region


def region(tr_id=0, center=(0.5, 0.5), length=0.8):
    center = np.asarray(center, dtype=float)
    return new_trust_region(tr_id, center, center.shape[0], TRDefaults(length_init=length))


def fixed(values_by_tr, cands_by_tr):
    """Candidate and draw functions that return fixed values (a zero-variance posterior)."""

    def candidate_fn(tr, step):
        return cands_by_tr[tr.id]

    def draw_fn(tr, X, rng):
        lookup = {tuple(x): v for x, v in zip(cands_by_tr[tr.id], values_by_tr[tr.id])}
        return np.array([lookup[tuple(x)] for x in X])

    return candidate_fn, draw_fn


def test_dominated_feasible_candidate_scores_zero():
    state = ParetoState.from_points((0, 0), [(3, 3)])
    assert score_candidates([[1, 1]], np.empty((1, 0)), [], state).tolist() == [0.0]


def test_infeasible_candidate_scores_negative_violation():
    state = ParetoState((0.0, 0.0))
    got = score_candidates([[5, 5]], [[0.3, -0.1]], [], state)
    assert got[0] == pytest.approx(-0.3)


def test_score_conditions_on_pending():
    front = [(1, 3), (3, 1)]
    state = ParetoState.from_points((0, 0), front)
    pending = [PendingPoint(np.zeros(2), np.array([2.0, 2.0]), np.empty(0), 0)]
    got = score_candidates([[2.5, 2.5]], np.empty((1, 0)), pending, state)[0]
    oracle = oracles.hv_inclusion_exclusion(front + [(2, 2), (2.5, 2.5)], (0, 0)) - oracles.hv_inclusion_exclusion(
        front + [(2, 2)], (0, 0)
    )
    assert got == pytest.approx(oracle, abs=1e-12)


def test_infeasible_pending_is_ignored():
    state = ParetoState.from_points((0, 0), [(1, 3), (3, 1)])
    pending = [PendingPoint(np.zeros(2), np.array([2.0, 2.0]), np.array([0.5]), 0)]
    got = score_candidates([[2.0, 2.0]], [[-1.0]], pending, state)[0]
    assert got == pytest.approx(1.0)


def test_re_selecting_pending_point_has_zero_gain():
    state = ParetoState.from_points((0, 0), [(1, 3), (3, 1)])
    pending = [PendingPoint(np.zeros(2), np.array([2.0, 2.0]), np.empty(0), 0)]
    assert score_candidates([[2.0, 2.0]], np.empty((1, 0)), pending, state)[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 3))
def test_score_signs(seed, num_cons):
    rng = np.random.default_rng(seed)
    state = ParetoState.from_points((0, 0), rng.random((4, 2)))
    F = rng.uniform(-0.5, 1.5, size=(20, 2))
    C = rng.normal(size=(20, num_cons))
    vals = score_candidates(F, C, [], state)
    feas = np.all(C <= 0, axis=1)
    assert np.all(vals[feas] >= 0)
    assert np.all(vals[~feas] < 0)


def test_dominating_candidate_selected():
    cands = np.array([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
    vals = np.array([[1.0, 1.0], [5.0, 5.0], [2.0, 2.0]])
    cf, df = fixed({0: vals}, {0: cands})
    state = ParetoState((0.0, 0.0))
    batch = select_batch([region()], None, state, 1, 3, 0.5, 0, candidate_fn=cf, draw_fn=df)
    np.testing.assert_array_equal(batch[0].x, cands[1])


def test_all_infeasible_picks_smallest_violation():
    cands = np.array([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
    vals = np.array([[1.0, 1.0, 0.5], [5.0, 5.0, 0.9], [2.0, 2.0, 0.2]])
    cf, df = fixed({0: vals}, {0: cands})
    batch = select_batch([region()], None, ParetoState((0.0, 0.0)), 1, 3, 0.5, 0, candidate_fn=cf, draw_fn=df)
    np.testing.assert_array_equal(batch[0].x, cands[2])
    assert batch[0].value == pytest.approx(-0.2)


def test_ties_go_to_lower_region_id():
    cands = {0: np.array([[0.1, 0.1]]), 1: np.array([[0.9, 0.9]])}
    vals = {0: np.array([[2.0, 2.0]]), 1: np.array([[2.0, 2.0]])}
    cf, df = fixed(vals, cands)
    regions = [region(1, (0.9, 0.9)), region(0, (0.1, 0.1))]
    batch = select_batch(regions, None, ParetoState((0.0, 0.0)), 1, 1, 0.5, 0, candidate_fn=cf, draw_fn=df)
    assert batch[0].source_tr == 0


def test_needs_an_active_region():
    tr = new_trust_region(0, np.full(2, 0.5), 2, TRDefaults(tau_fail=1, length_min=0.9))
    from morbo.trust_region import adjust_length, record_batch_outcome

    dead = adjust_length(record_batch_outcome(tr, False))
    with pytest.raises(LifecycleError):
        select_batch([dead], {}, ParetoState((0.0, 0.0)), 1, 4, 0.5, 0)


@pytest.mark.parametrize("q", [1, 2, 4])
def test_zero_variance_matches_brute_force_greedy(q):
    rng = np.random.default_rng(q)
    cands = rng.random((40, 2))
    vals = rng.random((40, 2)) * 2
    front = [(1.5, 0.2), (0.3, 1.6)]
    cf, df = fixed({0: vals}, {0: cands})
    state = ParetoState.from_points((0, 0), front)
    batch = select_batch([region()], None, state, q, 40, 0.5, 0, candidate_fn=cf, draw_fn=df)
    expected = oracles.brute_greedy_hvi(vals, front, (0, 0), q)
    got = [int(np.flatnonzero(np.all(cands == pp.x, axis=1))[0]) for pp in batch]
    assert got == expected


def test_candidate_order_invariance():
    rng = np.random.default_rng(5)
    cands = rng.random((30, 2))
    vals = rng.random((30, 2))
    perm = rng.permutation(30)
    state = ParetoState.from_points((0, 0), [(0.5, 0.5)])
    picks = []
    for order in (np.arange(30), perm):
        cf, df = fixed({0: vals[order]}, {0: cands[order]})
        picks.append(select_batch([region()], None, state, 1, 30, 0.5, 0, candidate_fn=cf, draw_fn=df)[0].x)
    np.testing.assert_array_equal(picks[0], picks[1])


def test_real_models_batch_size_and_boxes():
    rng = np.random.default_rng(6)
    X = rng.random((30, 3))
    f1 = -np.sum((X - 0.2) ** 2, axis=1)
    f2 = -np.sum((X - 0.8) ** 2, axis=1)
    models = [fit_gp(X, f1, rng=0), fit_gp(X, f2, rng=0)]
    regions = [region(0, X[0], 0.3), region(1, X[1], 0.5)]
    state = ParetoState.from_points((-3, -3), np.column_stack([f1, f2]))
    log = []
    batch = select_batch(
        regions, {0: models, 1: models}, state, 5, 64, 0.5, 7, base_points={0: X[:1], 1: X[1:2]}, log=log
    )
    assert len(batch) == 5
    by_id = {tr.id: tr for tr in regions}
    for pp in batch:
        assert np.all(by_id[pp.source_tr].contains(pp.x))
    assert [e["step"] for e in log] == [0, 1, 2, 3, 4]
    again = select_batch(
        regions, {0: models, 1: models}, state, 5, 64, 0.5, 7, base_points={0: X[:1], 1: X[1:2]}
    )
    for a, b in zip(batch, again):
        np.testing.assert_array_equal(a.x, b.x)


def test_rff_sampler_runs():
    rng = np.random.default_rng(7)
    X = rng.random((20, 2))
    models = [fit_gp(X, X[:, 0], rng=0), fit_gp(X, 1 - X[:, 0] ** 2, rng=0)]
    state = ParetoState.from_points((-1, -1), np.column_stack([X[:, 0], 1 - X[:, 0] ** 2]))
    batch = select_batch([region()], {0: models}, state, 3, 32, 0.5, 1, sampler="rff", num_features=256)
    assert len(batch) == 3
