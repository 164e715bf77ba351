"""Scoring estimated O-D matrices against ground truth."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from .aggregate import aggregate_od
from .model import (OTHER, ODMatrix, StopRegistry, TransferAssignment, TransferRates,
                    TripSegment, ZoneMap, segment_groups)
from .odmatrix import assemble_od_integral

REPORT_HEADER = ["resolution_label", "cut_height_m", "r_squared", "total_truth",
                 "total_estimate", "method", "solver_objective"]


class ZeroVarianceError(ValueError):
    """The truth matrix has identical entries, so R^2 is undefined."""


def r_squared(truth: ODMatrix, estimate: ODMatrix) -> float:
    """Share of the truth's variance around its mean entry explained by the estimate.

    Matrices are aligned by zone id over the union of both zone lists;
    missing entries count as zero.
    """
    a = truth.by_label()
    b = estimate.by_label()
    zones = set(truth.zone_map.zones) | set(estimate.zone_map.zones)
    cells = len(zones) ** 2
    mean = math.fsum(a.values()) / cells
    sse = math.fsum((a.get(k, 0.0) - b.get(k, 0.0)) ** 2 for k in set(a) | set(b))
    sst = math.fsum((v - mean) ** 2 for v in a.values()) + (cells - len(a)) * mean ** 2
    if sst <= 1e-12 * max(1.0, math.fsum(v * v for v in a.values())):
        raise ZeroVarianceError("truth matrix has zero variance")
    return 1.0 - sse / sst


@dataclass(frozen=True)
class Resolution:
    label: str
    cut_height_m: float  # nan for externally supplied maps such as TAZ
    zone_map: ZoneMap


@dataclass(frozen=True)
class EvalRow:
    resolution_label: str
    cut_height_m: float
    r_squared: float
    total_truth: float
    total_estimate: float


def evaluate_run(truth_segments: Sequence[TripSegment], truth: TransferAssignment,
                 estimate: ODMatrix, resolutions: Sequence[Resolution]) -> list[EvalRow]:
    """Score ``estimate`` against the truth O-D at every resolution.

    Both matrices are aggregated from the estimate's zone map. When the
    truth has zero variance (a single zone, for instance) the score is 1
    if the matrices agree entrywise and NaN otherwise.
    """
    truth_od = assemble_od_integral(truth_segments, truth, estimate.zone_map)
    rows = []
    for res in resolutions:
        t = aggregate_od(truth_od, res.zone_map)
        e = aggregate_od(estimate, res.zone_map)
        try:
            theta = r_squared(t, e)
        except ZeroVarianceError:
            tb, eb = t.by_label(), e.by_label()
            same = all(abs(tb.get(k, 0.0) - eb.get(k, 0.0)) <= 1e-9 for k in set(tb) | set(eb))
            theta = 1.0 if same else math.nan
        rows.append(EvalRow(res.label, res.cut_height_m, theta, t.total(), e.total()))
    return rows


def write_report_csv(path: Union[str, Path], rows: Sequence[EvalRow], method: str = "",
                     objective: Optional[float] = None) -> None:
    obj = "" if objective is None else repr(float(objective))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for r in rows:
            cut = "" if math.isnan(r.cut_height_m) else repr(float(r.cut_height_m))
            writer.writerow([r.resolution_label, cut, repr(r.r_squared), repr(r.total_truth),
                             repr(r.total_estimate), method, obj])


def read_report_csv(path: Union[str, Path]) -> list[EvalRow]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            cut = float(rec["cut_height_m"]) if rec["cut_height_m"] else math.nan
            rows.append(EvalRow(rec["resolution_label"], cut, float(rec["r_squared"]),
                                float(rec["total_truth"]), float(rec["total_estimate"])))
    return rows


def empirical_rates(segments: Sequence[TripSegment], truth: TransferAssignment,
                    registry: StopRegistry) -> TransferRates:
    """Realized transfer rates of a ground-truth assignment, per alighting group.

    A center where nobody alights gets rate 0.
    """
    groups = segment_groups(segments, registry)
    first = truth.first_leg
    size = {c: 0 for c in registry.centers}
    hits = dict(size)
    other_size = other_hits = 0
    for g, f in zip(groups, first):
        if g is OTHER:
            other_size += 1
            other_hits += f
        else:
            size[g] += 1
            hits[g] += f
    p1 = {c: hits[c] / size[c] if size[c] else 0.0 for c in registry.centers}
    return TransferRates(p1, other_hits / other_size if other_size else 0.0)
