import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netod.feasibility import build_feasibility, observed_transfer_targets
from netod.model import (FeasibilityGraph, FractionalSolution, Stop, StopRegistry,
                         TransferAssignment, TransferRates, TransferTargets, TripSegment)
from netod.solver import (InstanceTooLarge, QCPConvergenceError, SolverReport, objective_l1,
                          objective_l2, round_relaxation, solve_brute, solve_ip, solve_qcp)

import oracles


def _graph(n, arcs, groups, centers=("A", "B")):
    segs = [TripSegment(f"s{i}", "r", "a", "b", 10 * i, 10 * i + 5) for i in range(n)]
    return FeasibilityGraph(segs, arcs, groups, centers)


# ---- solve_ip -------------------------------------------------------------

def test_ip_without_arcs_returns_empty():
    g = _graph(3, [[], [], []], ["A", "B", None])
    a, rep = solve_ip(g, TransferTargets({"A": 1, "B": 1}, 1))
    assert a == TransferAssignment.empty(3)
    assert rep.objective == 3.0 and rep.method == "ip"


def test_ip_unique_zero_cost():
    g = _graph(2, [[1], []], ["A", "B"])
    a, rep = solve_ip(g, TransferTargets({"A": 1, "B": 0}, 0))
    assert a.arcs() == [(0, 1)] and rep.objective == 0.0


@pytest.mark.parametrize("seed", range(60))
def test_ip_matches_brute_on_ten_segment_instances(seed):
    rng = random.Random(seed)
    g, t = oracles.random_graph(rng, 10)
    a, rep = solve_ip(g, t)
    _, ref = solve_brute(g, None, None, t, "l1")
    assert a.is_valid_for(g)
    assert rep.objective == ref.objective == objective_l1(a, g, t)


@pytest.mark.parametrize("seed", range(30))
def test_brute_matches_subset_enumeration(seed):
    rng = random.Random(1000 + seed)
    g, t = oracles.random_graph(rng, rng.randint(1, 7))
    if g.n_arcs > 12:
        pytest.skip("subset oracle too slow")
    _, rep = solve_brute(g, None, None, t, "l1")
    assert rep.objective == oracles.l1_by_subsets(g, t)


def test_ip_is_deterministic():
    rng = random.Random(5)
    g, t = oracles.random_graph(rng, 12)
    assert solve_ip(g, t)[0] == solve_ip(g, t)[0]


# ---- objectives -------------------------------------------------------------

def test_objective_l1_examples():
    g = _graph(6, [[1], [], [3], [], [5], []], ["BTC", None, "BTC", None, "BTC", None],
               centers=("BTC",))
    empty = TransferAssignment.empty(6)
    assert objective_l1(empty, g, TransferTargets({"BTC": 80}, 8)) == 88
    full = TransferAssignment.from_arcs(6, [(0, 1), (2, 3), (4, 5)])
    assert objective_l1(full, g, TransferTargets({"BTC": 3}, 0)) == 0
    g2 = _graph(8, [[1], [], [3], [], [5], [], [7], []],
                ["BTC", None, "BTC", None, "BTC", None, None, None], centers=("BTC",))
    a = TransferAssignment.from_arcs(8, [(0, 1), (2, 3), (4, 5), (6, 7)])
    assert objective_l1(a, g2, TransferTargets({"BTC": 2}, 1)) == 1


def test_objective_l2_examples():
    rates = TransferRates({"BTC": 0.232}, 0.062)
    assert objective_l2({"BTC": 0.232}, 0.062, rates) == 0
    assert objective_l2({"BTC": 0.0}, 0.062, rates) == pytest.approx(0.053824, abs=1e-15)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=6),
       st.floats(0, 1), st.floats(0, 1), st.randoms(use_true_random=False))
def test_objective_l2_permutation_invariant(pairs, p2, p2s, rnd):
    names = [f"C{i}" for i in range(len(pairs))]
    p1 = dict(zip(names, (p for p, _ in pairs)))
    rates = TransferRates(dict(zip(names, (q for _, q in pairs))), p2s)
    shuffled = names[:]
    rnd.shuffle(shuffled)
    p1s = {k: p1[k] for k in shuffled}
    rates_s = TransferRates({k: rates.p1[k] for k in shuffled}, p2s)
    assert objective_l2(p1, p2, rates) == objective_l2(p1s, p2, rates_s)


# ---- brute ------------------------------------------------------------------

def _registry():
    return StopRegistry([Stop("A", 0, 0, True), Stop("B", 0, 0.1, True), Stop("Z", 0, 0.2)])


def test_brute_single_segment():
    g = FeasibilityGraph([TripSegment("s", "r", "Z", "A", 0, 5)], [[]], ["A"], ("A", "B"))
    rates = TransferRates({"A": 0.4, "B": 0.1}, 0.1)
    for obj in ("l1", "l2"):
        a, _ = solve_brute(g, _registry(), rates, TransferTargets({"A": 0}, 0), obj)
        assert a == TransferAssignment.empty(1)


def test_brute_l2_zero_when_achievable():
    g = _graph(4, [[1], [], [3], []], ["A", None, "B", None])
    rates = TransferRates({"A": 1.0, "B": 1.0}, 0.0)
    a, rep = solve_brute(g, _registry(), rates, TransferTargets({"A": 1, "B": 1}, 0), "l2")
    assert rep.objective == 0.0 and len(a.arcs()) == 2


def test_brute_refuses_large():
    g = _graph(17, [[] for _ in range(17)], [None] * 17)
    with pytest.raises(InstanceTooLarge):
        solve_brute(g, None, None, TransferTargets({}, 0))


def test_brute_ties_lexicographic():
    g = _graph(3, [[1, 2], [], []], ["A", None, None])
    a, _ = solve_brute(g, None, None, TransferTargets({"A": 1}, 0), "l1")
    assert a.arcs() == [(0, 1)]


# ---- solve_qcp --------------------------------------------------------------

def test_qcp_without_arcs():
    g = _graph(3, [[], [], []], ["A", "B", None])
    rates = TransferRates({"A": 0.3, "B": 0.4}, 0.2)
    frac = solve_qcp(g, _registry(), rates)
    assert np.all(frac.x == 0)
    assert frac.objective == pytest.approx(0.3 ** 2 + 0.4 ** 2 + 0.2 ** 2, abs=1e-15)


def test_qcp_zero_when_achievable():
    g = _graph(4, [[1], [], [3], []], ["A", None, "B", None])
    frac = solve_qcp(g, _registry(), TransferRates({"A": 1.0, "B": 1.0}, 0.0))
    assert frac.objective <= 1e-6


@pytest.mark.parametrize("seed", range(40))
def test_qcp_bounds_brute_l2(seed):
    rng = random.Random(seed)
    reg = oracles.random_registry(rng, 5)
    segs = oracles.random_segments(rng, reg, rng.randint(1, 8), n_routes=3, horizon_s=1500)
    g = build_feasibility(segs, reg)
    rates = oracles.random_rates(rng, reg)
    t = observed_transfer_targets(segs, reg, rates)
    frac = solve_qcp(g, reg, rates, tol=1e-6)
    _, ref = solve_brute(g, reg, rates, t, "l2")
    assert frac.objective <= ref.objective + 1e-5
    assert frac.kkt_residual <= 1e-6
    load = np.bincount(g.tails, frac.y, len(g)) + np.bincount(g.heads, frac.y, len(g))
    assert load.max(initial=0) <= 1 + 1e-6 and frac.y.min(initial=0) >= -1e-6


def test_qcp_iteration_cap_raises_with_best_iterate():
    rng = random.Random(3)
    reg = oracles.random_registry(rng, 5)
    segs = oracles.random_segments(rng, reg, 30, horizon_s=1500)
    g = build_feasibility(segs, reg)
    assert g.n_arcs > 0
    with pytest.raises(QCPConvergenceError) as exc:
        solve_qcp(g, reg, oracles.random_rates(rng, reg), tol=1e-12, max_iter=2)
    assert exc.value.best is not None and exc.value.residual > 1e-12


def test_qcp_rejects_bad_tol():
    g = _graph(1, [[]], [None])
    with pytest.raises(ValueError):
        solve_qcp(g, None, TransferRates({}, 0.1), tol=0.0)


def test_qcp_deterministic():
    rng = random.Random(9)
    reg = oracles.random_registry(rng, 5)
    segs = oracles.random_segments(rng, reg, 40, horizon_s=1500)
    g = build_feasibility(segs, reg)
    rates = oracles.random_rates(rng, reg)
    assert solve_qcp(g, reg, rates) == solve_qcp(g, reg, rates)


# ---- rounding ----------------------------------------------------------------

def _frac(x, y):
    return FractionalSolution(x, y, {}, 0.0, 0.0)


def test_threshold_picks_top_n():
    g = _graph(5, [[3], [4], [], [], []], [None] * 5)
    r = round_relaxation(_frac([0.9, 0.7, 0.4, 0, 0], [0.9, 0.7]), g, TransferTargets({}, 2))
    assert r.threshold == 0.7 and r.T1 == {0, 1} and r.T2 == {3, 4}


def test_normalization_example():
    g = _graph(3, [[1, 2], [], []], [None] * 3)
    r = round_relaxation(_frac([0.8, 0, 0], [0.2, 0.6]), g, TransferTargets({}, 2))
    assert r.distribution(0) == pytest.approx({1: 0.25, 2: 0.75}, abs=1e-15)


def test_no_observed_transfers():
    g = _graph(3, [[1, 2], [], []], [None] * 3)
    r = round_relaxation(_frac([0.8, 0, 0], [0.2, 0.6]), g, TransferTargets({}, 0))
    assert not r.T1 and not r.T2 and r.Ts == {0, 1, 2}


def test_ties_can_leave_t1_short():
    g = _graph(4, [[2], [3], [], []], [None] * 4)
    r = round_relaxation(_frac([0.5, 0.5, 0, 0], [0.5, 0.5]), g, TransferTargets({}, 1))
    assert not r.T1  # two segments tie above any admissible threshold


def test_first_leg_without_candidate_is_demoted():
    g = _graph(4, [[1], [2], [], []], [None] * 4)
    # segment 1 is a first leg (x high) so it cannot be a second leg of 0
    r = round_relaxation(_frac([0.9, 0.8, 0, 0], [0.9, 0.8]), g, TransferTargets({}, 2))
    assert 0 not in r.T1 and 0 in r.Ts and r.T1 == {1}


@st.composite
def fractional_instances(draw):
    n = draw(st.integers(0, 10))
    pairs = [(j, k) for j in range(n) for k in range(n) if j != k]
    chosen = sorted(draw(st.lists(st.sampled_from(pairs), unique=True, max_size=15))) if pairs else []
    arcs = [[k for jj, k in chosen if jj == j] for j in range(n)]
    g = _graph(n, arcs, [None] * n)
    val = st.floats(-0.1, 1.0, allow_nan=False)
    y = draw(st.lists(val, min_size=g.n_arcs, max_size=g.n_arcs))
    x = [sum(max(v, 0.0) for (j, _), v in zip(g.arc_list(), y) if j == i) for i in range(n)]
    x = [min(v, 1.0) if draw(st.booleans()) else draw(val) for v in x]
    return g, _frac(x, y), TransferTargets({}, draw(st.integers(0, n + 1)))


@given(fractional_instances())
def test_rounding_invariants(inst):
    g, frac, t = inst
    r = round_relaxation(frac, g, t)
    assert r.T1 | r.T2 | r.Ts == set(range(len(g)))
    assert not (r.T1 & r.T2) and not (r.T1 & r.Ts) and not (r.T2 & r.Ts)
    assert len(r.T1) <= t.n and len(r.T2) <= t.n
    for j in r.T1:
        dist = r.distribution(j)
        assert dist and abs(math.fsum(dist.values()) - 1.0) <= 1e-9
        assert all(p >= 0 and k in r.T2 for k, p in dist.items())


def test_report_text_round_trip():
    rep = SolverReport(1.5, 0.25, "qcp_rounded", 12, {"kkt_residual": 1e-7})
    back = SolverReport.from_text(rep.to_text())
    assert back == rep
    assert "wall_time" not in rep.to_text(timing=False)
    with pytest.raises(ValueError):
        SolverReport(-1.0, 0.0, "ip", 0)
