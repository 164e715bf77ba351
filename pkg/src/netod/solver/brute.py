"""Exhaustive TIP solver for tiny instances, used as a correctness oracle."""
from __future__ import annotations

import time
from typing import Optional

from ..model import (FeasibilityGraph, StopRegistry, TransferAssignment, TransferRates,
                     TransferTargets)
from .common import (InstanceTooLarge, SolverReport, check_rates, group_targets,
                     objective_l2, realized_rates)

MAX_BRUTE_SEGMENTS = 16


def solve_brute(graph: FeasibilityGraph, registry: Optional[StopRegistry],
                rates: Optional[TransferRates], targets: TransferTargets, objective: str = "l1",
                max_segments: int = MAX_BRUTE_SEGMENTS
                ) -> tuple[TransferAssignment, SolverReport]:
    """Enumerate every node-disjoint arc set and return a minimizer.

    ``objective="l1"`` scores count deviations from ``targets``;
    ``objective="l2"`` scores squared probability deviations from ``rates``.
    Ties go to the lexicographically smallest sorted arc list.
    """
    if objective not in ("l1", "l2"):
        raise ValueError(f"objective must be 'l1' or 'l2', not {objective!r}")
    n = len(graph)
    if n > max_segments:
        raise InstanceTooLarge(f"brute force refuses {n} segments (limit {max_segments})")
    if objective == "l2":
        rates = check_rates(rates, registry)
    start = time.perf_counter()

    keys = graph.group_keys
    gid = graph.group_index().tolist()
    sizes = dict(zip(keys, graph.group_sizes().tolist()))
    delta = group_targets(graph, targets).tolist()
    incident: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for j, k in graph.arc_list():
        incident[j].append((j, k))
        incident[k].append((j, k))

    used = [False] * n
    counts = [0] * len(keys)
    chosen: list[tuple[int, int]] = []
    best: list = [None, None]  # (score, arcs)
    leaves = 0

    def score() -> float:
        if objective == "l1":
            return float(sum(abs(d - c) for d, c in zip(delta, counts)))
        p1, p2 = realized_rates(dict(zip(keys, counts)), sizes, rates)
        return objective_l2(p1, p2, rates)

    def visit(v: int) -> None:
        nonlocal leaves
        while v < n and used[v]:
            v += 1
        if v == n:
            leaves += 1
            key = (score(), tuple(sorted(chosen)))
            if best[0] is None or key < best[0]:
                best[0] = key
            return
        used[v] = True
        visit(v + 1)
        for j, k in incident[v]:
            other = k if j == v else j
            if other > v and not used[other]:
                used[other] = True
                chosen.append((j, k))
                counts[gid[j]] += 1
                visit(v + 1)
                counts[gid[j]] -= 1
                chosen.pop()
                used[other] = False
        used[v] = False

    visit(0)
    value, arcs = best[0]
    assignment = TransferAssignment.from_arcs(n, arcs)
    report = SolverReport(value, time.perf_counter() - start, f"brute_{objective}", leaves)
    return assignment, report
