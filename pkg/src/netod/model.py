"""Core domain types shared across the package.

Everything here is an immutable value object. Segment-level quantities are
addressed by position in an ordered segment list; arcs of the feasibility
graph are ``(tail, head)`` pairs of such positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

OTHER = None  # group key for segments alighting outside transit centers


@dataclass(frozen=True)
class Stop:
    stop_id: str
    lat: float
    lon: float
    is_transit_center: bool = False

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"stop {self.stop_id!r}: latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"stop {self.stop_id!r}: longitude {self.lon} out of range")

    def to_dict(self) -> dict:
        return {"stop_id": self.stop_id, "lat": self.lat, "lon": self.lon,
                "is_transit_center": self.is_transit_center}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Stop":
        return cls(str(d["stop_id"]), float(d["lat"]), float(d["lon"]),
                   bool(d.get("is_transit_center", False)))


class StopRegistry:
    """Ordered collection of stops with O(1) lookup by id."""

    def __init__(self, stops: Iterable[Stop]):
        self._stops = tuple(stops)
        index = {}
        for pos, stop in enumerate(self._stops):
            if stop.stop_id in index:
                raise ValueError(f"duplicate stop_id {stop.stop_id!r}")
            index[stop.stop_id] = pos
        self._index = index
        self._coords = np.array([(s.lat, s.lon) for s in self._stops],
                                dtype=float).reshape(-1, 2)
        self._coords.flags.writeable = False

    @property
    def stops(self) -> tuple[Stop, ...]:
        return self._stops

    @property
    def index(self) -> Mapping[str, int]:
        return self._index

    @property
    def coords(self) -> np.ndarray:
        """``(n, 2)`` array of (lat, lon) in registry order."""
        return self._coords

    def __len__(self) -> int:
        return len(self._stops)

    def __iter__(self) -> Iterator[Stop]:
        return iter(self._stops)

    def __contains__(self, stop_id: object) -> bool:
        return stop_id in self._index

    def __getitem__(self, stop_id: str) -> Stop:
        return self._stops[self._index[stop_id]]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StopRegistry) and self._stops == other._stops

    def __hash__(self) -> int:
        return hash(self._stops)

    def __repr__(self) -> str:
        return f"StopRegistry({len(self)} stops, {len(self.centers)} centers)"

    @property
    def centers(self) -> tuple[str, ...]:
        """Transit-center ids in registry order."""
        return tuple(s.stop_id for s in self._stops if s.is_transit_center)

    def is_center(self, stop_id: str) -> bool:
        return self[stop_id].is_transit_center

    def to_dict(self) -> dict:
        return {"stops": [s.to_dict() for s in self._stops]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StopRegistry":
        return cls(Stop.from_dict(s) for s in d["stops"])


@dataclass(frozen=True)
class TripSegment:
    """One boarding-alighting pair.

    Times are integer seconds since midnight of ``service_day``; values past
    86400 denote post-midnight service. ``service_day`` is an opaque label
    (ISO date in practice); segments of different days never chain.
    """
    segment_id: str
    route_id: str
    board_stop: str
    alight_stop: str
    board_time: int
    alight_time: int
    service_day: str = ""

    def to_dict(self) -> dict:
        return {"segment_id": self.segment_id, "route_id": self.route_id,
                "board_stop": self.board_stop, "alight_stop": self.alight_stop,
                "board_time": self.board_time, "alight_time": self.alight_time,
                "service_day": self.service_day}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TripSegment":
        return cls(str(d["segment_id"]), str(d["route_id"]), str(d["board_stop"]),
                   str(d["alight_stop"]), int(d["board_time"]), int(d["alight_time"]),
                   str(d.get("service_day", "")))


@dataclass(frozen=True)
class TransferRates:
    """Observed transfer probabilities: per transit center, and for all other stops."""
    p1: Mapping[str, float]
    p2: float

    def __post_init__(self):
        object.__setattr__(self, "p1", dict(self.p1))

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.p1.items())), self.p2))

    def to_dict(self) -> dict:
        return {"p1": dict(self.p1), "p2": self.p2}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransferRates":
        return cls({str(k): float(v) for k, v in d["p1"].items()}, float(d["p2"]))

    def rate_for(self, group: Optional[str]) -> float:
        return self.p2 if group is OTHER else self.p1.get(group, 0.0)


@dataclass(frozen=True)
class FeasibilityParams:
    max_walk_m: float = 402.0
    max_transfer_s: int = 1800

    def __post_init__(self):
        if not self.max_walk_m > 0:
            raise ValueError("max_walk_m must be positive")
        if not self.max_transfer_s > 0:
            raise ValueError("max_transfer_s must be positive")

    def to_dict(self) -> dict:
        return {"max_walk_m": self.max_walk_m, "max_transfer_s": self.max_transfer_s}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeasibilityParams":
        return cls(float(d["max_walk_m"]), int(d["max_transfer_s"]))


class FeasibilityGraph:
    """Candidate transfers between segments.

    ``arcs[j]`` is the sorted tuple of successor positions k that segment j
    may transfer to. ``groups[j]`` is the transit-center id at which j
    alights, or ``OTHER``.
    """

    def __init__(self, segments: Sequence[TripSegment], arcs: Sequence[Sequence[int]],
                 groups: Sequence[Optional[str]], centers: Sequence[str] = ()):
        if len(arcs) != len(segments) or len(groups) != len(segments):
            raise ValueError("segments, arcs and groups must have equal length")
        self.segments = tuple(segments)
        self.arcs = tuple(tuple(int(k) for k in sorted(a)) for a in arcs)
        self.groups = tuple(groups)
        # group order: centers first (given order), then OTHER
        found = [c for c in centers]
        for g in self.groups:
            if g is not OTHER and g not in found:
                found.append(g)
        self.centers = tuple(found)
        tails = [j for j, succ in enumerate(self.arcs) for _ in succ]
        heads = [k for succ in self.arcs for k in succ]
        self._tails = np.asarray(tails, dtype=np.int64)
        self._heads = np.asarray(heads, dtype=np.int64)
        self._tails.flags.writeable = False
        self._heads.flags.writeable = False

    def __len__(self) -> int:
        return len(self.segments)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, FeasibilityGraph) and self.segments == other.segments
                and self.arcs == other.arcs and self.groups == other.groups)

    def __repr__(self) -> str:
        return f"FeasibilityGraph({len(self)} segments, {self.n_arcs} arcs)"

    @property
    def n_arcs(self) -> int:
        return int(self._tails.size)

    @property
    def tails(self) -> np.ndarray:
        """Arc tails in canonical order (by tail, then head)."""
        return self._tails

    @property
    def heads(self) -> np.ndarray:
        return self._heads

    def arc_list(self) -> list[tuple[int, int]]:
        return list(zip(self._tails.tolist(), self._heads.tolist()))

    @property
    def group_keys(self) -> tuple[Optional[str], ...]:
        """Centers followed by ``OTHER``: the index space of ``group_index``."""
        return self.centers + (OTHER,)

    def group_index(self) -> np.ndarray:
        """Per-segment integer group id into ``group_keys``."""
        pos = {g: i for i, g in enumerate(self.group_keys)}
        return np.array([pos[g] for g in self.groups], dtype=np.int64)

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group_index(), minlength=len(self.group_keys))

    def to_dict(self) -> dict:
        return {"segments": [s.to_dict() for s in self.segments],
                "arcs": [list(a) for a in self.arcs],
                "groups": list(self.groups), "centers": list(self.centers)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeasibilityGraph":
        return cls([TripSegment.from_dict(s) for s in d["segments"]], d["arcs"],
                   d["groups"], d.get("centers", ()))


@dataclass(frozen=True)
class TransferTargets:
    """Observed transfer counts: per center, elsewhere, and their total."""
    delta1: Mapping[str, int]
    delta2: int
    n: int = -1

    def __post_init__(self):
        object.__setattr__(self, "delta1", {k: int(v) for k, v in self.delta1.items()})
        total = sum(self.delta1.values()) + int(self.delta2)
        if self.n == -1:
            object.__setattr__(self, "n", total)
        elif self.n != total:
            raise ValueError(f"n={self.n} differs from the sum of deltas {total}")
        if self.delta2 < 0 or any(v < 0 for v in self.delta1.values()):
            raise ValueError("transfer targets must be nonnegative")

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.delta1.items())), self.delta2, self.n))

    def for_group(self, group: Optional[str]) -> int:
        return self.delta2 if group is OTHER else self.delta1.get(group, 0)

    def to_dict(self) -> dict:
        return {"delta1": dict(self.delta1), "delta2": self.delta2, "n": self.n}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransferTargets":
        return cls({str(k): int(v) for k, v in d["delta1"].items()}, int(d["delta2"]), int(d["n"]))


@dataclass(frozen=True)
class TransferAssignment:
    """Integral TIP solution.

    ``transfer_to[j]`` is the segment j transfers to, or None. The selected
    arcs are node-disjoint: a segment is a first leg, a second leg, or neither.
    """
    transfer_to: tuple[Optional[int], ...]

    def __post_init__(self):
        tt = tuple(None if k is None else int(k) for k in self.transfer_to)
        object.__setattr__(self, "transfer_to", tt)
        seen: set[int] = set()
        for j, k in enumerate(tt):
            if k is None:
                continue
            if k == j:
                raise ValueError(f"segment {j} transfers to itself")
            if k in seen:
                raise ValueError(f"segment {k} is the second leg of two transfers")
            seen.add(k)
        for k in seen:
            if tt[k] is not None:
                raise ValueError(f"segment {k} is both a second leg and a first leg")

    @classmethod
    def empty(cls, n_segments: int) -> "TransferAssignment":
        return cls((None,) * n_segments)

    @classmethod
    def from_arcs(cls, n_segments: int, arcs: Iterable[tuple[int, int]]) -> "TransferAssignment":
        tt: list[Optional[int]] = [None] * n_segments
        for j, k in arcs:
            if tt[j] is not None:
                raise ValueError(f"segment {j} has two outgoing transfers")
            tt[j] = int(k)
        return cls(tuple(tt))

    def __len__(self) -> int:
        return len(self.transfer_to)

    @property
    def first_leg(self) -> tuple[bool, ...]:
        return tuple(k is not None for k in self.transfer_to)

    def arcs(self) -> list[tuple[int, int]]:
        return [(j, k) for j, k in enumerate(self.transfer_to) if k is not None]

    def partition(self) -> tuple[frozenset[int], frozenset[int], frozenset[int]]:
        """(first legs, second legs, singleton trips)."""
        t1 = frozenset(j for j, k in enumerate(self.transfer_to) if k is not None)
        t2 = frozenset(k for k in self.transfer_to if k is not None)
        ts = frozenset(range(len(self.transfer_to))) - t1 - t2
        return t1, t2, ts

    def is_valid_for(self, graph: FeasibilityGraph) -> bool:
        if len(self) != len(graph):
            return False
        return all(k is None or k in graph.arcs[j] for j, k in enumerate(self.transfer_to))

    def to_dict(self) -> dict:
        return {"transfer_to": list(self.transfer_to)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransferAssignment":
        return cls(tuple(d["transfer_to"]))


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FractionalSolution:
    """Relaxed TIP solution; ``y`` is aligned with the graph's canonical arc order."""
    x: np.ndarray
    y: np.ndarray
    p1: Mapping[str, float]
    p2: float
    objective: float
    kkt_residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen_array(self.x))
        object.__setattr__(self, "y", _frozen_array(self.y))
        object.__setattr__(self, "p1", dict(self.p1))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FractionalSolution):
            return NotImplemented
        return (np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and self.p1 == other.p1 and self.p2 == other.p2
                and self.objective == other.objective
                and self.kkt_residual == other.kkt_residual
                and self.iterations == other.iterations)

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist(), "p1": dict(self.p1),
                "p2": self.p2, "objective": self.objective,
                "kkt_residual": self.kkt_residual, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FractionalSolution":
        return cls(d["x"], d["y"], d["p1"], float(d["p2"]), float(d["objective"]),
                   float(d.get("kkt_residual", 0.0)), int(d.get("iterations", 0)))


@dataclass(frozen=True)
class RoundedSolution:
    """Partition of segments derived from a fractional solution.

    ``probs[(j, k)]`` is the normalized probability that first leg j
    continues on second leg k.
    """
    T1: frozenset[int]
    T2: frozenset[int]
    Ts: frozenset[int]
    probs: Mapping[tuple[int, int], float]
    threshold: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "T1", frozenset(self.T1))
        object.__setattr__(self, "T2", frozenset(self.T2))
        object.__setattr__(self, "Ts", frozenset(self.Ts))
        object.__setattr__(self, "probs", {(int(j), int(k)): float(p)
                                           for (j, k), p in self.probs.items()})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoundedSolution):
            return NotImplemented
        same_threshold = (self.threshold == other.threshold
                          or (math.isnan(self.threshold) and math.isnan(other.threshold)))
        return (self.T1 == other.T1 and self.T2 == other.T2 and self.Ts == other.Ts
                and self.probs == other.probs and same_threshold)

    def distribution(self, j: int) -> dict[int, float]:
        return {k: p for (jj, k), p in self.probs.items() if jj == j}

    def to_dict(self) -> dict:
        return {"T1": sorted(self.T1), "T2": sorted(self.T2), "Ts": sorted(self.Ts),
                "probs": [[j, k, p] for (j, k), p in sorted(self.probs.items())],
                "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RoundedSolution":
        return cls(frozenset(d["T1"]), frozenset(d["T2"]), frozenset(d["Ts"]),
                   {(int(j), int(k)): float(p) for j, k, p in d["probs"]},
                   float(d.get("threshold", math.nan)))


@dataclass(frozen=True)
class ZoneMap:
    """Total map from stop id to a zone; ``assignment`` values index ``zones``."""
    zones: tuple[str, ...]
    assignment: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "assignment", dict(self.assignment))
        if len(set(self.zones)) != len(self.zones):
            raise ValueError("duplicate zone ids")
        bad = [s for s, z in self.assignment.items() if not 0 <= z < len(self.zones)]
        if bad:
            raise ValueError(f"stops mapped outside the zone list: {bad[:5]}")

    def __hash__(self) -> int:
        return hash((self.zones, tuple(sorted(self.assignment.items()))))

    @classmethod
    def identity(cls, registry: StopRegistry) -> "ZoneMap":
        ids = tuple(s.stop_id for s in registry)
        return cls(ids, {sid: i for i, sid in enumerate(ids)})

    @classmethod
    def from_labels(cls, labels: Mapping[str, str]) -> "ZoneMap":
        """Build from ``stop_id -> zone_id``; zones in first-appearance order."""
        zones: dict[str, int] = {}
        assignment = {}
        for stop_id, zone in labels.items():
            assignment[stop_id] = zones.setdefault(zone, len(zones))
        return cls(tuple(zones), assignment)

    def __len__(self) -> int:
        return len(self.zones)

    def zone_of(self, stop_id: str) -> str:
        return self.zones[self.assignment[stop_id]]

    def labels(self) -> dict[str, str]:
        return {s: self.zones[z] for s, z in self.assignment.items()}

    def to_dict(self) -> dict:
        return {"zones": list(self.zones), "assignment": dict(self.assignment)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ZoneMap":
        return cls(tuple(d["zones"]), {str(k): int(v) for k, v in d["assignment"].items()})


@dataclass(frozen=True)
class ODMatrix:
    """Sparse zone-to-zone flow matrix; absent pairs are zero."""
    zone_map: ZoneMap
    flow: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.zone_map)
        clean = {}
        for (o, d), v in self.flow.items():
            if not (0 <= o < n and 0 <= d < n):
                raise ValueError(f"zone pair {(o, d)} outside a {n}-zone map")
            if v < 0:
                raise ValueError(f"negative flow {v} at {(o, d)}")
            if v != 0:
                clean[(int(o), int(d))] = float(v)
        object.__setattr__(self, "flow", clean)

    @property
    def size(self) -> int:
        return len(self.zone_map)

    def total(self) -> float:
        return math.fsum(self.flow.values())

    def get(self, origin: str, dest: str) -> float:
        zones = {z: i for i, z in enumerate(self.zone_map.zones)}
        return self.flow.get((zones[origin], zones[dest]), 0.0)

    def by_label(self) -> dict[tuple[str, str], float]:
        zones = self.zone_map.zones
        return {(zones[o], zones[d]): v for (o, d), v in self.flow.items()}

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        for (o, d), v in self.flow.items():
            out[o, d] = v
        return out

    def to_dict(self) -> dict:
        return {"zone_map": self.zone_map.to_dict(),
                "flow": [[o, d, v] for (o, d), v in sorted(self.flow.items())]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ODMatrix":
        return cls(ZoneMap.from_dict(d["zone_map"]),
                   {(int(o), int(dd)): float(v) for o, dd, v in d["flow"]})


@dataclass(frozen=True)
class Violation:
    subject: str
    reason: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.reason}"


def validate_instance(segments: Sequence[TripSegment], registry: StopRegistry,
                      rates: TransferRates) -> list[Violation]:
    """Report every admissibility problem; an empty list means the instance is usable."""
    out: list[Violation] = []
    seen: set[str] = set()
    for seg in segments:
        sid = f"segment {seg.segment_id}"
        if seg.segment_id in seen:
            out.append(Violation(sid, "duplicate segment_id"))
        seen.add(seg.segment_id)
        for role, stop in (("board_stop", seg.board_stop), ("alight_stop", seg.alight_stop)):
            if stop not in registry:
                out.append(Violation(sid, f"unknown {role} {stop!r}"))
        if seg.board_stop == seg.alight_stop:
            out.append(Violation(sid, "boards and alights at the same stop"))
        if seg.alight_time < seg.board_time:
            out.append(Violation(sid, "alight_time precedes board_time"))
    for stop_id, p in rates.p1.items():
        if stop_id not in registry:
            out.append(Violation(f"p1[{stop_id}]", "unknown stop"))
        elif not registry[stop_id].is_transit_center:
            out.append(Violation(f"p1[{stop_id}]", "stop is not a transit center"))
        if not 0.0 <= p <= 1.0:
            out.append(Violation(f"p1[{stop_id}]", f"rate {p} outside [0, 1]"))
    if not 0.0 <= rates.p2 <= 1.0:
        out.append(Violation("p2", f"rate {rates.p2} outside [0, 1]"))
    return out


def segment_groups(segments: Sequence[TripSegment], registry: StopRegistry) -> list[Optional[str]]:
    """Center id where each segment alights, or ``OTHER``."""
    return [s.alight_stop if registry[s.alight_stop].is_transit_center else OTHER
            for s in segments]
