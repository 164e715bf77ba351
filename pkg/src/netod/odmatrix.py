"""Origin-destination matrices from solved transfer assignments."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence, Union

from .ingest import IngestError, csv_rows
from .model import ODMatrix, RoundedSolution, TransferAssignment, TripSegment, ZoneMap

OD_HEADER = ["origin_zone", "dest_zone", "flow"]


def _zone_index(zone_map: ZoneMap, segments: Sequence[TripSegment]):
    board = [zone_map.assignment[s.board_stop] for s in segments]
    alight = [zone_map.assignment[s.alight_stop] for s in segments]
    return board, alight


def assemble_od_integral(segments: Sequence[TripSegment], assignment: TransferAssignment,
                         zone_map: ZoneMap) -> ODMatrix:
    """Singleton trips count at their own ends; a transfer counts once, from the
    first leg's boarding zone to the second leg's alighting zone."""
    if len(assignment) != len(segments):
        raise ValueError("assignment and segments differ in length")
    board, alight = _zone_index(zone_map, segments)
    _, second, _ = assignment.partition()
    flow: dict[tuple[int, int], float] = defaultdict(float)
    for j, k in enumerate(assignment.transfer_to):
        if k is not None:
            flow[(board[j], alight[k])] += 1.0
        elif j not in second:
            flow[(board[j], alight[j])] += 1.0
    return ODMatrix(zone_map, flow)


def assemble_od_fractional(segments: Sequence[TripSegment], rounded: RoundedSolution,
                           zone_map: ZoneMap) -> ODMatrix:
    """Like the integral case, but each first leg's trip is split over its
    candidate second legs by their rounding probabilities."""
    board, alight = _zone_index(zone_map, segments)
    flow: dict[tuple[int, int], float] = defaultdict(float)
    for j in sorted(rounded.Ts):
        flow[(board[j], alight[j])] += 1.0
    for (j, k), p in sorted(rounded.probs.items()):
        flow[(board[j], alight[k])] += p
    return ODMatrix(zone_map, flow)


def _format_flow(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_od_csv(path: Union[str, Path], od: ODMatrix) -> None:
    """Nonzero entries as ``origin_zone,dest_zone,flow``, sorted by zone ids."""
    rows = sorted((o, d, v) for (o, d), v in od.by_label().items())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OD_HEADER)
        writer.writerows((o, d, _format_flow(v)) for o, d, v in rows)


def read_od_csv(path: Union[str, Path], zone_map: ZoneMap) -> ODMatrix:
    pos = {z: i for i, z in enumerate(zone_map.zones)}
    flow: dict[tuple[int, int], float] = {}
    for lineno, row in csv_rows(path, OD_HEADER):
        try:
            key = (pos[row["origin_zone"]], pos[row["dest_zone"]])
        except KeyError as exc:
            raise IngestError(path, f"zone {exc.args[0]!r} not in the zone map", lineno) from None
        try:
            value = float(row["flow"])
        except ValueError:
            raise IngestError(path, f"unparsable flow {row['flow']!r}", lineno) from None
        if value < 0:
            raise IngestError(path, "negative flow", lineno)
        if key in flow:
            raise IngestError(path, "duplicate zone pair", lineno)
        flow[key] = value
    return ODMatrix(zone_map, flow)
