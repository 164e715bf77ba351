from __future__ import annotations

import math

import numpy as np

from ..model import FeasibilityGraph, FractionalSolution, RoundedSolution, TransferTargets


def round_relaxation(frac: FractionalSolution, graph: FeasibilityGraph,
                     targets: TransferTargets) -> RoundedSolution:
    """Turn relaxed arc values into first legs, second legs and singletons.

    First legs are the segments with ``x_j >= x*``, the smallest x value
    that at most ``n`` segments meet or exceed. Every other segment k is
    scored by the relaxed inflow from the first legs; the ``n`` best scores
    (ties to the lower index, zero scores never selected) become second
    legs. Each first leg then spreads one trip over its candidate second
    legs in proportion to ``y``. A first leg left with no candidate or zero
    total weight becomes a singleton.
    """
    n_seg = len(graph)
    n = targets.n
    x = np.asarray(frac.x, dtype=float)
    y = np.clip(np.asarray(frac.y, dtype=float), 0.0, None)
    if x.size != n_seg or y.size != graph.n_arcs:
        raise ValueError("fractional solution does not match the graph")
    everyone = frozenset(range(n_seg))
    if n == 0 or n_seg == 0:
        return RoundedSolution(frozenset(), frozenset(), everyone, {})

    ascending = np.sort(x)
    at_least = n_seg - np.searchsorted(ascending, x, side="left")
    eligible = at_least <= n
    if not eligible.any():
        return RoundedSolution(frozenset(), frozenset(), everyone, {})
    threshold = float(x[eligible].min())
    first = x >= threshold

    tails, heads = graph.tails, graph.heads
    from_first = first[tails]
    score = np.bincount(heads[from_first], y[from_first], minlength=n_seg)
    pool = np.flatnonzero(~first & (score > 0))
    ranked = pool[np.lexsort((pool, -score[pool]))][:n]
    second = np.zeros(n_seg, dtype=bool)
    second[ranked] = True

    probs: dict[tuple[int, int], float] = {}
    t1: list[int] = []
    starts = np.searchsorted(tails, np.arange(n_seg + 1))
    for j in np.flatnonzero(first).tolist():
        lo, hi = starts[j], starts[j + 1]
        ks, ys = heads[lo:hi], y[lo:hi]
        keep = second[ks]
        ks, ys = ks[keep], ys[keep]
        total = math.fsum(ys.tolist())
        if ks.size == 0 or total <= 0:
            continue
        t1.append(j)
        for k, v in zip(ks.tolist(), ys.tolist()):
            probs[(j, k)] = v / total
    t1s, t2s = frozenset(t1), frozenset(ranked.tolist())
    return RoundedSolution(t1s, t2s, everyone - t1s - t2s, probs, threshold)
