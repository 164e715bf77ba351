"""Candidate-transfer graph and observed transfer targets."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .model import (OTHER, FeasibilityGraph, FeasibilityParams, StopRegistry,
                    TransferRates, TransferTargets, TripSegment, segment_groups)

EARTH_RADIUS_M = 6_371_000.0


def geo_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between two (lat, lon) points in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_to_many(origin: tuple[float, float], coords: np.ndarray) -> np.ndarray:
    """Vectorized ``geo_distance`` from one point to each row of ``coords``."""
    lat1, lon1 = np.radians(origin[0]), np.radians(origin[1])
    lat2, lon2 = np.radians(coords[:, 0]), np.radians(coords[:, 1])
    h = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """Symmetric ``(n, n)`` haversine distance matrix."""
    lat = np.radians(coords[:, 0])[:, None]
    lon = np.radians(coords[:, 1])[:, None]
    h = (np.sin((lat.T - lat) / 2) ** 2
         + np.cos(lat) * np.cos(lat.T) * np.sin((lon.T - lon) / 2) ** 2)
    d = 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))
    d = np.minimum(d, d.T)  # exact symmetry despite rounding
    np.fill_diagonal(d, 0.0)
    return d


class _WalkNeighbors:
    """Lazily computed boolean rows ``dist(stop, .) < max_walk_m``."""

    def __init__(self, registry: StopRegistry, max_walk_m: float):
        self._coords = registry.coords
        self._limit = max_walk_m
        self._rows: dict[int, np.ndarray] = {}

    def row(self, stop: int) -> np.ndarray:
        r = self._rows.get(stop)
        if r is None:
            d = haversine_to_many(tuple(self._coords[stop]), self._coords)
            r = d < self._limit
            # re-decide boundary cases with the scalar metric
            near = np.flatnonzero(np.abs(d - self._limit) < 1e-6)
            for k in near:
                r[k] = geo_distance(tuple(self._coords[stop]), tuple(self._coords[k])) < self._limit
            self._rows[stop] = r
        return r


def build_feasibility(segments: Sequence[TripSegment], registry: StopRegistry,
                      params: FeasibilityParams = FeasibilityParams()) -> FeasibilityGraph:
    """Candidate transfer sets ``T_j`` for every segment.

    k is a candidate second leg of j iff the routes differ, k boards strictly
    closer than ``max_walk_m`` to where j alights, and k boards strictly
    within ``(0, max_transfer_s)`` seconds after j alights on the same
    service day. Segments are scanned in boarding-time order so each tail
    only inspects the boardings inside its transfer window.
    """
    n = len(segments)
    if n == 0:
        return FeasibilityGraph([], [], [], registry.centers)
    stop_pos = registry.index
    board_t = np.array([s.board_time for s in segments], dtype=np.int64)
    alight_t = np.array([s.alight_time for s in segments], dtype=np.int64)
    board_stop = np.array([stop_pos[s.board_stop] for s in segments], dtype=np.int64)
    alight_stop = np.array([stop_pos[s.alight_stop] for s in segments], dtype=np.int64)
    _, route = np.unique([s.route_id for s in segments], return_inverse=True)
    _, day = np.unique([s.service_day for s in segments], return_inverse=True)

    # sort by (day, board time) so a window never spans two service days
    order = np.lexsort((board_t, day))
    key_day = day[order]
    key_t = board_t[order]
    near = _WalkNeighbors(registry, params.max_walk_m)
    arcs: list[list[int]] = []
    for j in range(n):
        d = day[j]
        lo_day = np.searchsorted(key_day, d, side="left")
        hi_day = np.searchsorted(key_day, d, side="right")
        t_day = key_t[lo_day:hi_day]
        lo = lo_day + np.searchsorted(t_day, alight_t[j], side="right")
        hi = lo_day + np.searchsorted(t_day, alight_t[j] + params.max_transfer_s, side="left")
        if hi <= lo:
            arcs.append([])
            continue
        cand = order[lo:hi]
        keep = (route[cand] != route[j]) & near.row(alight_stop[j])[board_stop[cand]]
        arcs.append(np.sort(cand[keep]).tolist())
    return FeasibilityGraph(segments, arcs, segment_groups(segments, registry), registry.centers)


def observed_transfer_targets(segments: Sequence[TripSegment], registry: StopRegistry,
                              rates: TransferRates) -> TransferTargets:
    """Integer transfer targets from observed rates.

    Each group's target is the rate times the number of segments alighting
    in that group, rounded half to even; ``n`` is their sum.
    """
    counts: dict = {c: 0 for c in registry.centers}
    other = 0
    for g in segment_groups(segments, registry):
        if g is OTHER:
            other += 1
        else:
            counts[g] += 1
    delta1 = {c: int(round(rates.p1.get(c, 0.0) * cnt)) for c, cnt in counts.items()}
    delta2 = int(round(rates.p2 * other))
    return TransferTargets(delta1, delta2)


def write_graph_csv(path: Union[str, Path], graph: FeasibilityGraph) -> None:
    """Debug dump of the arcs as ``tail_segment,head_segment`` rows."""
    ids = [s.segment_id for s in graph.segments]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("tail_segment,head_segment\n")
        for j, k in graph.arc_list():
            fh.write(f"{ids[j]},{ids[k]}\n")
