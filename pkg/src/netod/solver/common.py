from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ..model import (OTHER, FeasibilityGraph, StopRegistry, TransferAssignment, TransferRates,
                     TransferTargets)

METHODS = ("ip", "qcp_rounded", "brute_l1", "brute_l2")


class SolverError(RuntimeError):
    """A solve could not produce a result."""


class InstanceTooLarge(SolverError):
    pass


@dataclass(frozen=True)
class SolverReport:
    objective: float
    wall_time: float
    method: str
    iterations: int
    extra: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.objective < 0:
            raise ValueError("objective must be nonnegative")
        object.__setattr__(self, "extra", dict(self.extra))

    def to_text(self, timing: bool = True) -> str:
        """``key: value`` block; ``timing=False`` drops the wall-clock line."""
        lines = [f"method: {self.method}", f"objective: {self.objective!r}",
                 f"iterations: {self.iterations}"]
        if timing:
            lines.append(f"wall_time: {self.wall_time!r}")
        lines += [f"{k}: {v!r}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SolverReport":
        fields: dict[str, str] = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition(":")
                fields[key.strip()] = value.strip()
        extra = {k: float(v) for k, v in fields.items()
                 if k not in ("method", "objective", "iterations", "wall_time")}
        return cls(float(fields["objective"]), float(fields.get("wall_time", "nan")),
                   fields["method"], int(fields["iterations"]), extra)


def group_counts(assignment: TransferAssignment, graph: FeasibilityGraph) -> dict:
    """Number of first legs per alighting group (centers, then ``OTHER``)."""
    counts = {g: 0 for g in graph.group_keys}
    for j, k in enumerate(assignment.transfer_to):
        if k is not None:
            counts[graph.groups[j]] += 1
    return counts


def objective_l1(assignment: TransferAssignment, graph: FeasibilityGraph,
                 targets: TransferTargets) -> float:
    """Absolute deviation between target and realized transfer counts, summed over groups."""
    counts = group_counts(assignment, graph)
    keys = set(targets.delta1) | set(graph.centers)
    total = sum(abs(targets.delta1.get(c, 0) - counts.get(c, 0)) for c in keys)
    return float(total + abs(targets.delta2 - counts[OTHER]))


def objective_l2(p1: Mapping[str, float], p2: float, rates: TransferRates) -> float:
    """Squared deviation between realized and observed transfer probabilities."""
    keys = sorted(set(p1) | set(rates.p1))
    terms = [(p1.get(c, 0.0) - rates.p1.get(c, 0.0)) ** 2 for c in keys]
    terms.append((p2 - rates.p2) ** 2)
    return math.fsum(sorted(terms))


def realized_rates(counts: Mapping, sizes: Mapping, rates: TransferRates
                   ) -> tuple[dict[str, float], float]:
    """Transfer probabilities from first-leg counts; empty groups take the observed rate."""
    def rate(g):
        return counts.get(g, 0) / sizes[g] if sizes.get(g, 0) else rates.rate_for(g)

    p1 = {c: rate(c) for c in sizes if c is not OTHER}
    return p1, rate(OTHER)


def assignment_rates(assignment: TransferAssignment, graph: FeasibilityGraph,
                     rates: TransferRates) -> tuple[dict[str, float], float]:
    sizes = dict(zip(graph.group_keys, graph.group_sizes().tolist()))
    return realized_rates(group_counts(assignment, graph), sizes, rates)


def group_targets(graph: FeasibilityGraph, targets: TransferTargets) -> np.ndarray:
    """Per-group integer targets aligned with ``graph.group_keys``."""
    return np.array([targets.for_group(g) for g in graph.group_keys], dtype=np.int64)


def lexicographic_arcs(arcs) -> tuple[tuple[int, int], ...]:
    return tuple(sorted((int(j), int(k)) for j, k in arcs))


def check_rates(rates: Optional[TransferRates],
                registry: Optional[StopRegistry] = None) -> TransferRates:
    """Rates must exist and, given a registry, name only its transit centers."""
    if rates is None:
        raise ValueError("transfer rates are required for the squared objective")
    if registry is not None:
        bad = [c for c in rates.p1 if c not in registry or not registry[c].is_transit_center]
        if bad:
            raise ValueError(f"rates given for stops that are not transit centers: {bad}")
    return rates
