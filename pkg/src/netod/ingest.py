"""CSV readers and writers for stops, trip segments, transfer rates and zones.

All files are UTF-8, comma separated, with a mandatory header row. Writers
emit LF line endings and render times as ``HH:MM:SS`` (hours may exceed 23).
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .model import Stop, StopRegistry, TransferRates, TripSegment, ZoneMap

PathLike = Union[str, Path]

STOPS_HEADER = ["stop_id", "lat", "lon", "is_transit_center"]
SEGMENTS_HEADER = ["segment_id", "route_id", "board_stop", "alight_stop",
                   "board_time", "alight_time"]
RATES_HEADER = ["scope", "stop_id", "rate"]
ZONES_HEADER = ["stop_id", "zone_id"]

_TRUE = {"1", "true"}
_FALSE = {"0", "false"}


class IngestError(ValueError):
    """Malformed or inconsistent input file."""

    def __init__(self, path: PathLike, message: str, line: Optional[int] = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def parse_time(text: str) -> int:
    """``HH:MM:SS`` to seconds; hours may exceed 23 for post-midnight service."""
    parts = text.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"bad time {text!r}")
    h, m, s = (int(p) for p in parts)
    if h < 0 or not 0 <= m < 60 or not 0 <= s < 60:
        raise ValueError(f"bad time {text!r}")
    return h * 3600 + m * 60 + s


def format_time(seconds: int) -> str:
    h, rem = divmod(int(seconds), 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"bad boolean {text!r}")


def csv_rows(path: PathLike, header: Sequence[str], optional: Sequence[str] = ()):
    """Yield ``(line_number, row_dict)`` after checking the header."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            found = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(path, "empty file") from None
        required = list(header)
        if found[:len(required)] != required or any(h not in optional
                                                    for h in found[len(required):]):
            raise IngestError(path, f"expected header {','.join(required)}, got {','.join(found)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(found):
                raise IngestError(path, f"expected {len(found)} fields, got {len(row)}", lineno)
            yield lineno, dict(zip(found, (c.strip() for c in row)))


def _write(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def parse_stops(path: PathLike) -> StopRegistry:
    stops: list[Stop] = []
    seen: set[str] = set()
    for lineno, row in csv_rows(path, STOPS_HEADER):
        sid = row["stop_id"]
        if not sid:
            raise IngestError(path, "empty stop_id", lineno)
        if sid in seen:
            raise IngestError(path, f"duplicate stop_id {sid!r}", lineno)
        seen.add(sid)
        try:
            lat, lon = float(row["lat"]), float(row["lon"])
        except ValueError:
            raise IngestError(path, "unparsable coordinate", lineno) from None
        if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
            raise IngestError(path, f"latitude {row['lat']} out of range", lineno)
        if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
            raise IngestError(path, f"longitude {row['lon']} out of range", lineno)
        try:
            center = parse_bool(row["is_transit_center"])
        except ValueError as exc:
            raise IngestError(path, str(exc), lineno) from None
        stops.append(Stop(sid, lat, lon, center))
    return StopRegistry(stops)


def write_stops(path: PathLike, registry: StopRegistry) -> None:
    _write(path, STOPS_HEADER, ((s.stop_id, repr(s.lat), repr(s.lon), int(s.is_transit_center))
                                for s in registry))


def stops_from_gtfs(path: PathLike, centers: Iterable[str] = ()) -> StopRegistry:
    """Convert a GTFS ``stops.txt`` into a registry, flagging the given centers."""
    centers = set(centers)
    stops = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                stops.append(Stop(row["stop_id"], float(row["stop_lat"]),
                                  float(row["stop_lon"]), row["stop_id"] in centers))
            except (KeyError, ValueError) as exc:
                raise IngestError(path, f"bad GTFS stop row ({exc})", lineno) from None
    missing = centers - {s.stop_id for s in stops}
    if missing:
        raise IngestError(path, f"transit centers not in feed: {sorted(missing)}")
    return StopRegistry(stops)


def parse_segments(path: PathLike, registry: StopRegistry) -> list[TripSegment]:
    """Read trip segments; an optional trailing ``service_day`` column is accepted."""
    out: list[TripSegment] = []
    seen: set[str] = set()
    for lineno, row in csv_rows(path, SEGMENTS_HEADER, optional=("service_day",)):
        for key in ("board_stop", "alight_stop"):
            if row[key] not in registry:
                raise IngestError(path, f"unknown {key} {row[key]!r}", lineno)
        if row["segment_id"] in seen:
            raise IngestError(path, f"duplicate segment_id {row['segment_id']!r}", lineno)
        seen.add(row["segment_id"])
        try:
            board, alight = parse_time(row["board_time"]), parse_time(row["alight_time"])
        except ValueError as exc:
            raise IngestError(path, str(exc), lineno) from None
        if alight < board:
            raise IngestError(path, "alight_time precedes board_time", lineno)
        if row["board_stop"] == row["alight_stop"]:
            raise IngestError(path, "board_stop equals alight_stop", lineno)
        out.append(TripSegment(row["segment_id"], row["route_id"], row["board_stop"],
                               row["alight_stop"], board, alight, row.get("service_day", "")))
    return out


def write_segments(path: PathLike, segments: Sequence[TripSegment]) -> None:
    with_day = any(s.service_day for s in segments)
    header = SEGMENTS_HEADER + (["service_day"] if with_day else [])

    def row(s: TripSegment):
        base = [s.segment_id, s.route_id, s.board_stop, s.alight_stop,
                format_time(s.board_time), format_time(s.alight_time)]
        return base + [s.service_day] if with_day else base

    _write(path, header, (row(s) for s in segments))


def parse_rates(path: PathLike, registry: StopRegistry) -> TransferRates:
    p1: dict[str, float] = {}
    p2: Optional[float] = None
    for lineno, row in csv_rows(path, RATES_HEADER):
        try:
            rate = float(row["rate"])
        except ValueError:
            raise IngestError(path, f"unparsable rate {row['rate']!r}", lineno) from None
        if not 0.0 <= rate <= 1.0:
            raise IngestError(path, f"rate {rate} outside [0, 1]", lineno)
        scope, sid = row["scope"].lower(), row["stop_id"]
        if scope == "center":
            if sid not in registry:
                raise IngestError(path, f"unknown stop {sid!r}", lineno)
            if not registry[sid].is_transit_center:
                raise IngestError(path, f"stop {sid!r} is not flagged as a transit center", lineno)
            if sid in p1:
                raise IngestError(path, f"duplicate rate for center {sid!r}", lineno)
            p1[sid] = rate
        elif scope == "other":
            if sid:
                raise IngestError(path, "the 'other' row must have an empty stop_id", lineno)
            if p2 is not None:
                raise IngestError(path, "more than one 'other' row", lineno)
            p2 = rate
        else:
            raise IngestError(path, f"unknown scope {row['scope']!r}", lineno)
    if p2 is None:
        raise IngestError(path, "missing 'other' row")
    return TransferRates(p1, p2)


def write_rates(path: PathLike, rates: TransferRates) -> None:
    rows = [("center", sid, repr(p)) for sid, p in rates.p1.items()]
    rows.append(("other", "", repr(rates.p2)))
    _write(path, RATES_HEADER, rows)


def parse_zones(path: PathLike, registry: StopRegistry) -> ZoneMap:
    labels: dict[str, str] = {}
    for lineno, row in csv_rows(path, ZONES_HEADER):
        sid = row["stop_id"]
        if sid not in registry:
            raise IngestError(path, f"unknown stop {sid!r}", lineno)
        if sid in labels:
            raise IngestError(path, f"duplicate row for stop {sid!r}", lineno)
        if not row["zone_id"]:
            raise IngestError(path, "empty zone_id", lineno)
        labels[sid] = row["zone_id"]
    missing = [s.stop_id for s in registry if s.stop_id not in labels]
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise IngestError(path, f"{len(missing)} stops missing from zone map: {shown}")
    return ZoneMap.from_labels(labels)


def write_zones(path: PathLike, zone_map: ZoneMap, registry: Optional[StopRegistry] = None) -> None:
    """Write in registry order when given, else in assignment order."""
    order = [s.stop_id for s in registry] if registry is not None else list(zone_map.assignment)
    _write(path, ZONES_HEADER, ((sid, zone_map.zone_of(sid)) for sid in order))

