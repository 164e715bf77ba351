"""Zone maps at coarser resolutions and aggregation of O-D matrices onto them."""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .feasibility import pairwise_distances
from .model import ODMatrix, StopRegistry, ZoneMap


class AggregationError(ValueError):
    pass


def tac_cut_height(radius_m: float) -> float:
    """A cluster with pairwise distances at most 2r lies within r of any member."""
    if radius_m < 0:
        raise ValueError("radius must be nonnegative")
    return 2.0 * radius_m


def hca_clusters(registry: StopRegistry, cut_height_m: float) -> ZoneMap:
    """Complete-linkage agglomerative clustering of stops cut at ``cut_height_m``.

    Clusters merge while the smallest complete-linkage distance is at most
    the cut height; ties go to the pair with the smallest zone ids. A zone
    is named after its lowest member ``stop_id``. A cut height of 0 always
    yields one zone per stop, even for co-located stops.
    """
    if not cut_height_m >= 0:
        raise ValueError("cut height must be nonnegative")
    ids = sorted(s.stop_id for s in registry)
    if cut_height_m == 0 or len(ids) < 2:
        return _zone_map(ids, list(range(len(ids))))
    pos = registry.index
    dist = pairwise_distances(registry.coords[[pos[s] for s in ids]])
    n = len(ids)
    # only the upper triangle (row < column) is ever searched
    dist[np.tril_indices(n)] = np.inf
    rep = np.arange(n)  # cluster representative of each sorted stop
    row_min = dist.min(axis=1)
    row_arg = dist.argmin(axis=1)
    alive = np.ones(n, dtype=bool)

    while True:
        i = int(np.argmin(row_min))
        if not row_min[i] <= cut_height_m:
            break
        j = int(row_arg[i])
        # complete linkage: merged distance is the max of the two
        merged = np.maximum(np.concatenate([dist[:i, i], dist[i, i:]]),
                            np.concatenate([dist[:j, j], dist[j, j:]]))
        merged[i] = np.inf
        dist[:i, i] = merged[:i]
        dist[i, i:] = merged[i:]
        dist[:j, j] = np.inf
        dist[j, :] = np.inf
        alive[j] = False
        row_min[j] = np.inf
        rep[rep == j] = i
        stale = np.flatnonzero(alive & ((row_arg == i) | (row_arg == j)))
        stale = np.union1d(stale, [i])
        row_min[stale] = dist[stale].min(axis=1)
        row_arg[stale] = dist[stale].argmin(axis=1)
    return _zone_map(ids, rep.tolist())


def _zone_map(ids: list[str], rep: list[int]) -> ZoneMap:
    # representatives are the lowest sorted position of each cluster
    return ZoneMap.from_labels({sid: ids[r] for sid, r in zip(ids, rep)})


def aggregate_od(od: ODMatrix, coarse: ZoneMap) -> ODMatrix:
    """Sum fine-zone flows into the coarse zones containing them."""
    fine = od.zone_map
    to_coarse: dict[int, int] = {}
    for stop, z in fine.assignment.items():
        if stop not in coarse.assignment:
            raise AggregationError(f"stop {stop!r} of fine zone {fine.zones[z]!r} "
                                   "is missing from the coarse zone map")
        c = coarse.assignment[stop]
        if to_coarse.setdefault(z, c) != c:
            raise AggregationError(f"fine zone {fine.zones[z]!r} spans coarse zones "
                                   f"{coarse.zones[to_coarse[z]]!r} and {coarse.zones[c]!r}")
    parts: dict[tuple[int, int], list[float]] = defaultdict(list)
    for (o, d), v in od.flow.items():
        if o not in to_coarse or d not in to_coarse:
            raise AggregationError(f"fine zone pair {(fine.zones[o], fine.zones[d])} has no stops")
        parts[(to_coarse[o], to_coarse[d])].append(v)
    return ODMatrix(coarse, {k: math.fsum(v) for k, v in parts.items()})
