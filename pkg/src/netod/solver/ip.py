"""Exact L1 transfer identification.

With integral targets the L1 optimum equals ``n - m`` where ``m`` is the
largest node-disjoint arc set using at most ``delta_g`` first legs per
alighting group: overshooting a group never helps, so the program reduces
to a capacitated matching. Because a segment may be a first leg or a second
leg but not both, that matching lives on a general graph. We bound it with
a max-flow over split tail/head copies (which allows a segment to play both
roles). Re-solving it with penalties on segments it uses twice usually
reaches the bound with a valid matching; otherwise branch-and-bound on
such conflicting segments closes the gap.
"""
from __future__ import annotations

import time
from typing import Optional

import numpy as np
from ortools.graph.python import min_cost_flow

from ..model import FeasibilityGraph, TransferAssignment, TransferTargets
from .common import SolverError, SolverReport, group_targets

# cost added per round to one role of a segment used in both; waits are under an hour
_PENALTY_STEP = 2000
_PENALTY_PATIENCE = 30


class _FlowBound:
    """Max-flow relaxation with per-segment role restrictions.

    Nodes: source, sink, one per group, a tail copy and a head copy per
    segment. Pair arcs cost the waiting time between the legs, so among
    maximum flows the shortest connections are preferred; optional
    per-segment penalties are charged on the tail and head copies.
    """

    def __init__(self, graph: FeasibilityGraph, delta: np.ndarray):
        n, g = len(graph), len(delta)
        tails, heads = graph.tails, graph.heads
        self.n, self.g = n, g
        self.tails, self.heads = tails, heads
        self.delta = delta
        group_node = 2 + np.arange(g)
        tail_node = 2 + g + np.arange(n)
        head_node = 2 + g + n + np.arange(n)
        board = np.array([s.board_time for s in graph.segments], dtype=np.int64)
        alight = np.array([s.alight_time for s in graph.segments], dtype=np.int64)
        self.can_tail = np.bincount(tails, minlength=n) > 0
        self.can_head = np.bincount(heads, minlength=n) > 0
        self.starts = np.concatenate([np.zeros(g, dtype=np.int64), group_node[graph.group_index()],
                                      tail_node[tails], head_node])
        self.ends = np.concatenate([group_node, tail_node, head_node[heads],
                                    np.ones(n, dtype=np.int64)])
        self.wait = board[heads] - alight[tails]
        self.supply = int(min(delta.sum(), n))
        self.solves = 0

    def solve(self, no_tail: np.ndarray, no_head: np.ndarray,
              penalty: Optional[tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
        """Selected arc indices of a min-cost maximum flow under the restrictions."""
        n, g = self.n, self.g
        zero = np.zeros(n, dtype=np.int64)
        tail_pen, head_pen = (zero, zero) if penalty is None else penalty
        caps = np.concatenate([self.delta, self.can_tail & ~no_tail, np.ones(self.wait.size),
                               self.can_head & ~no_head]).astype(np.int64)
        costs = np.concatenate([np.zeros(g, dtype=np.int64), tail_pen, self.wait, head_pen])
        flow = min_cost_flow.SimpleMinCostFlow()
        arcs = flow.add_arcs_with_capacity_and_unit_cost(self.starts, self.ends, caps, costs)
        flow.set_nodes_supplies(np.array([0, 1]), np.array([self.supply, -self.supply]))
        status = flow.solve_max_flow_with_min_cost()
        self.solves += 1
        if status != flow.OPTIMAL:
            raise SolverError(f"flow relaxation failed with status {status}")
        return np.flatnonzero(flow.flows(arcs[g + n:g + n + self.wait.size]))

    def conflicts(self, sel: np.ndarray) -> np.ndarray:
        """Segments used both as a first leg and as a second leg."""
        as_tail = np.zeros(self.n, dtype=bool)
        as_head = np.zeros(self.n, dtype=bool)
        as_tail[self.tails[sel]] = True
        as_head[self.heads[sel]] = True
        return np.flatnonzero(as_tail & as_head)

    def repair(self, sel: np.ndarray) -> np.ndarray:
        """Drop the outgoing arc of every conflicting segment."""
        bad = np.zeros(self.n, dtype=bool)
        bad[self.conflicts(sel)] = True
        return sel[~bad[self.tails[sel]]]


def solve_ip(graph: FeasibilityGraph, targets: TransferTargets,
             max_penalty_rounds: int = 300) -> tuple[TransferAssignment, SolverReport]:
    """Minimize the L1 deviation from the target transfer counts exactly.

    The incumbent comes from re-solving the flow with penalties on segments
    the previous flow used in both roles, alternating which role is
    penalized, then from a dive that forbids the remaining conflicts as
    first legs. If neither reaches the flow bound, branch-and-bound settles
    optimality.
    """
    start = time.perf_counter()
    n = len(graph)
    delta = group_targets(graph, targets)
    n_target = int(delta.sum())
    if graph.n_arcs == 0 or n_target == 0:
        report = SolverReport(float(n_target), time.perf_counter() - start, "ip", 0,
                              {"bound": float(n_target), "heuristic_rounds": 0.0})
        return TransferAssignment.empty(n), report

    lp = _FlowBound(graph, delta)
    none = np.zeros(n, dtype=bool)
    sel = lp.solve(none, none)
    bound = sel.size
    best = lp.repair(sel)
    tail_pen = np.zeros(n, dtype=np.int64)
    head_pen = np.zeros(n, dtype=np.int64)
    hits = np.zeros(n, dtype=np.int64)
    rounds = stall = 0
    while best.size < bound and rounds < max_penalty_rounds and stall < _PENALTY_PATIENCE:
        bad = lp.conflicts(sel)
        odd = hits[bad] % 2 == 1
        tail_pen[bad[~odd]] += _PENALTY_STEP
        head_pen[bad[odd]] += _PENALTY_STEP
        hits[bad] += 1
        sel = lp.solve(none, none, (tail_pen, head_pen))
        rounds += 1
        stall += 1
        repaired = lp.repair(sel)
        if repaired.size > best.size:
            best, stall = repaired, 0
    no_tail = none.copy()
    while best.size < bound:
        bad = lp.conflicts(sel)
        if bad.size == 0:
            break
        no_tail[bad] = True
        sel = lp.solve(no_tail, none, (tail_pen, head_pen))
        rounds += 1
        repaired = lp.repair(sel)
        if repaired.size > best.size:
            best = repaired
    nodes = 0
    if best.size < bound:
        best, nodes = _branch_and_bound(lp, best, bound, (tail_pen, head_pen))

    arcs = zip(lp.tails[best].tolist(), lp.heads[best].tolist())
    assignment = TransferAssignment.from_arcs(n, arcs)
    report = SolverReport(float(n_target - best.size), time.perf_counter() - start, "ip",
                          nodes, {"bound": float(n_target - bound),
                                  "heuristic_rounds": float(rounds),
                                  "flow_solves": float(lp.solves)})
    return assignment, report


def _branch_and_bound(lp: _FlowBound, best: np.ndarray, bound: int,
                      penalty: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, int]:
    """Depth-first search over role restrictions of conflicting segments.

    At a node whose flow has a conflict on segment v, every matching of the
    node's subproblem either leaves v out of the first-leg role or out of
    the second-leg role, so the two children cover it.
    """
    none = np.zeros(lp.n, dtype=bool)
    stack = [(none, none)]
    nodes = 0
    while stack:
        no_tail, no_head = stack.pop()
        nodes += 1
        sel = lp.solve(no_tail, no_head, penalty)
        if sel.size <= best.size:
            continue
        bad = lp.conflicts(sel)
        if bad.size == 0:
            best = sel
            if best.size == bound:
                break
            continue
        repaired = lp.repair(sel)
        if repaired.size > best.size:
            best = repaired
        v = bad[0]
        head_child = no_head.copy()
        head_child[v] = True
        tail_child = no_tail.copy()
        tail_child[v] = True
        stack.append((no_tail, head_child))
        stack.append((tail_child, no_head))
    return best, nodes
