"""Trip chaining: alightings and transfers inferred from boarding-only card taps.

Each card-day is processed on its own. A leg alights at the downstream stop
of its route nearest the card's next boarding (or, for the last leg of the
day, nearest the day's first boarding). Consecutive legs are linked as a
transfer when the next boarding follows the inferred alighting within the
transfer window on a different route. Any leg that cannot be inferred
drops the whole card-day.
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .feasibility import geo_distance
from .ingest import IngestError, csv_rows, format_time, parse_time
from .model import StopRegistry, TransferAssignment, TripSegment

log = logging.getLogger(__name__)

TRANSACTIONS_HEADER = ["card_id", "service_day", "route_id", "board_stop", "board_time"]
ROUTES_HEADER = ["route_id", "stop_sequence", "stop_id", "offset_s"]
TRUTH_HEADER = ["first_leg", "second_leg"]


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class Transaction:
    card_id: str
    route_id: str
    board_stop: str
    board_time: int
    service_day: str = ""


@dataclass(frozen=True)
class Route:
    """Ordered stops with scheduled offsets (seconds) from the first stop."""
    route_id: str
    stops: tuple[str, ...]
    offsets: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "stops", tuple(self.stops))
        object.__setattr__(self, "offsets", tuple(int(o) for o in self.offsets))
        if len(self.stops) != len(self.offsets):
            raise ValueError(f"route {self.route_id}: stops and offsets differ in length")
        if any(b < a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValueError(f"route {self.route_id}: offsets must be nondecreasing")


@dataclass(frozen=True)
class ChainParams:
    walk_m: float = 402.0
    transfer_s: int = 1800


@dataclass(frozen=True)
class ChainResult:
    segments: list[TripSegment]
    truth: TransferAssignment
    dropped_cards: int
    kept_cards: int


def _alight(route: Route, board_stop: str, target: str, registry: StopRegistry,
            walk_m: float) -> Optional[int]:
    """Position on ``route`` of the downstream stop nearest ``target``, if walkable."""
    try:
        p = route.stops.index(board_stop)
    except ValueError:
        return None
    goal = (registry[target].lat, registry[target].lon)
    best, best_d = None, walk_m
    for q in range(p + 1, len(route.stops)):
        s = registry[route.stops[q]]
        d = geo_distance((s.lat, s.lon), goal)
        if d < best_d:
            best, best_d = q, d
    return best


def trip_chain(transactions: Sequence[Transaction], registry: StopRegistry,
               routes: Mapping[str, Route], params: ChainParams = ChainParams()) -> ChainResult:
    """Infer segments and ground-truth transfers.

    Card-days are emitted in (service_day, card_id) order, legs in boarding
    order. Segment ids are ``<card>/<day>/<leg>``.
    """
    days: dict[tuple[str, str], list[Transaction]] = defaultdict(list)
    for t in transactions:
        if t.route_id not in routes:
            raise ChainError(f"unknown route {t.route_id!r} on card {t.card_id!r}")
        if t.board_stop not in registry:
            raise ChainError(f"unknown stop {t.board_stop!r} on card {t.card_id!r}")
        days[(t.service_day, t.card_id)].append(t)

    segments: list[TripSegment] = []
    links: list[tuple[int, int]] = []
    dropped = 0
    for (day, card), taps in sorted(days.items()):
        taps = sorted(taps, key=lambda t: t.board_time)
        legs = _chain_day(taps, registry, routes, params)
        if legs is None:
            dropped += 1
            continue
        base = len(segments)
        prev_linked = False
        for i, (t, stop, when) in enumerate(legs):
            segments.append(TripSegment(f"{card}/{day}/{i}", t.route_id, t.board_stop,
                                        stop, t.board_time, when, day))
            if i + 1 < len(legs) and not prev_linked:
                nxt = taps[i + 1]
                gap = nxt.board_time - when
                if 0 < gap < params.transfer_s and nxt.route_id != t.route_id:
                    links.append((base + i, base + i + 1))
                    prev_linked = True
                    continue
            prev_linked = False
    if dropped:
        log.info("trip chaining dropped %d of %d card-days", dropped, len(days))
    truth = TransferAssignment.from_arcs(len(segments), links)
    return ChainResult(segments, truth, dropped, len(days) - dropped)


def _chain_day(taps, registry, routes, params):
    """``[(transaction, alight_stop, alight_time)]`` or None if any leg fails."""
    out = []
    for i, t in enumerate(taps):
        route = routes[t.route_id]
        target = taps[i + 1].board_stop if i + 1 < len(taps) else taps[0].board_stop
        q = _alight(route, t.board_stop, target, registry, params.walk_m)
        if q is None:
            return None
        p = route.stops.index(t.board_stop)
        when = t.board_time + route.offsets[q] - route.offsets[p]
        if i + 1 < len(taps) and taps[i + 1].board_time < when:
            return None  # boards again before this leg could have arrived
        out.append((t, route.stops[q], when))
    return out


def read_transactions(path: Union[str, Path], registry: StopRegistry) -> list[Transaction]:
    out = []
    for lineno, row in csv_rows(path, TRANSACTIONS_HEADER):
        if row["board_stop"] not in registry:
            raise IngestError(path, f"unknown board_stop {row['board_stop']!r}", lineno)
        try:
            when = parse_time(row["board_time"])
        except ValueError as exc:
            raise IngestError(path, str(exc), lineno) from None
        out.append(Transaction(row["card_id"], row["route_id"], row["board_stop"], when,
                               row["service_day"]))
    return out


def write_transactions(path: Union[str, Path], transactions: Sequence[Transaction]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSACTIONS_HEADER)
        w.writerows((t.card_id, t.service_day, t.route_id, t.board_stop,
                     format_time(t.board_time)) for t in transactions)


def read_routes(path: Union[str, Path], registry: StopRegistry) -> dict[str, Route]:
    rows: dict[str, list[tuple[int, str, int]]] = defaultdict(list)
    for lineno, row in csv_rows(path, ROUTES_HEADER):
        if row["stop_id"] not in registry:
            raise IngestError(path, f"unknown stop {row['stop_id']!r}", lineno)
        try:
            rows[row["route_id"]].append((int(row["stop_sequence"]), row["stop_id"],
                                          int(row["offset_s"])))
        except ValueError:
            raise IngestError(path, "stop_sequence and offset_s must be integers", lineno) from None
    routes = {}
    for rid, seq in rows.items():
        seq.sort()
        try:
            routes[rid] = Route(rid, [s for _, s, _ in seq], [o for _, _, o in seq])
        except ValueError as exc:
            raise IngestError(path, str(exc)) from None
    return routes


def write_routes(path: Union[str, Path], routes: Mapping[str, Route]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUTES_HEADER)
        for rid in sorted(routes):
            r = routes[rid]
            w.writerows((rid, i, s, o) for i, (s, o) in enumerate(zip(r.stops, r.offsets)))


def write_truth(path: Union[str, Path], segments: Sequence[TripSegment],
                truth: TransferAssignment) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        w.writerows((segments[j].segment_id, segments[k].segment_id) for j, k in truth.arcs())


def read_truth(path: Union[str, Path], segments: Sequence[TripSegment]) -> TransferAssignment:
    pos = {s.segment_id: i for i, s in enumerate(segments)}
    arcs = []
    for lineno, row in csv_rows(path, TRUTH_HEADER):
        try:
            arcs.append((pos[row["first_leg"]], pos[row["second_leg"]]))
        except KeyError as exc:
            raise IngestError(path, f"unknown segment {exc.args[0]!r}", lineno) from None
    try:
        return TransferAssignment.from_arcs(len(segments), arcs)
    except ValueError as exc:
        raise IngestError(path, str(exc)) from None
