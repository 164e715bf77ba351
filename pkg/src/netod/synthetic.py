"""Seeded synthetic transit network and commuter population.

Stops sit on a square grid, spaced a little farther apart than the walking
threshold, so the only walkable transfers are at stops shared by crossing
lines. Each line runs in both directions with a fixed headway. Every
passenger has a home stop and a destination and, on each service day they
ride (with probability ``ride_probability``), travels there and back either
directly or with one transfer where two lines cross. Transferring riders
plan their trip: they take the first-leg run, among those leaving soon
after they are ready, with the shortest connection. Which passengers
transfer is chosen so that the realized transfer rates match the
configured ones as closely as integer counts allow.
"""
from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .chaining import Route, Transaction
from .model import Stop, StopRegistry, TransferRates

log = logging.getLogger(__name__)

STOP_SPACING_M = 450.0
_METERS_PER_DEG_LAT = 111_195.0
_ORIGIN = (42.28, -83.74)
_HEADWAYS_S = (600, 900, 1200)
_MIN_CONNECTION_S = 60
_PLAN_WINDOW_S = 1800  # transferring riders pick the best-connecting run this soon after they are ready
_CENTER_BOOST = 8.0
_CROSSING_BOOST = 2.0


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n_passengers: int = 2000
    n_routes: int = 16
    n_stops: int = 400
    transfer_rate_centers: float = 0.3
    transfer_rate_other: float = 0.1
    seed: int = 0
    service_start: int = 5 * 3600
    service_end: int = 24 * 3600
    n_days: int = 1
    first_day: str = "2017-10-02"
    ride_probability: float = 1.0  # chance that a passenger travels on a given day

    def __post_init__(self):
        for name in ("n_passengers", "n_routes", "n_stops", "n_days"):
            if getattr(self, name) <= 0:
                raise SyntheticConfigError(f"{name} must be positive")
        if not 0.0 < self.ride_probability <= 1.0:
            raise SyntheticConfigError("ride_probability must lie in (0, 1]")
        for name in ("transfer_rate_centers", "transfer_rate_other"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SyntheticConfigError(f"{name} must lie in [0, 1]")
        if self.n_routes % 2 or self.n_routes < 4:
            raise SyntheticConfigError("n_routes must be even and at least 4 "
                                       "(each line runs in both directions)")
        if self.n_stops < 9:
            raise SyntheticConfigError("n_stops must be at least 9")
        if not self.service_start < self.service_end:
            raise SyntheticConfigError("service_start must precede service_end")
        if self.service_start > 6 * 3600 or self.service_end < 21 * 3600:
            raise SyntheticConfigError("the service window must cover 06:00 to 21:00")
        dt.date.fromisoformat(self.first_day)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SyntheticScenario:
    registry: StopRegistry
    routes: dict[str, Route]
    transactions: list[Transaction]
    rates: TransferRates
    # (card_id, service_day, leg index): leg i of that card-day transfers to leg i + 1
    intended_transfers: list[tuple[str, str, int]] = field(default_factory=list)


def _grid(cfg: SyntheticConfig):
    cols = math.ceil(math.sqrt(cfg.n_stops))
    rows = math.ceil(cfg.n_stops / cols)
    dlat = STOP_SPACING_M / _METERS_PER_DEG_LAT
    dlon = dlat / math.cos(math.radians(_ORIGIN[0]))
    cells = [divmod(i, cols) for i in range(cfg.n_stops)]
    centers = set()
    for fr in (1 / 3, 2 / 3):
        r, c = int(rows * fr), int(cols * fr)
        if r * cols + c >= cfg.n_stops:
            r -= 1
        centers.add(r * cols + c)
    stops = [Stop(f"S{i:04d}", _ORIGIN[0] + r * dlat, _ORIGIN[1] + c * dlon, i in centers)
             for i, (r, c) in enumerate(cells)]
    return rows, cols, stops, sorted(centers)


def _lines(cfg, rows, cols, centers, rng) -> list[list[int]]:
    """Stop indices of each line; lines through the centers come first."""
    def members(kind, k):
        if kind == "h":
            return [i for i in range(k * cols, (k + 1) * cols) if i < cfg.n_stops]
        return [i for i in range(k, cfg.n_stops, cols)]

    order = []
    for ctr in centers:
        r, c = divmod(ctr, cols)
        order += [("h", r), ("v", c)]
    rest_h = [("h", r) for r in rng.permutation(rows).tolist() if ("h", r) not in order]
    rest_v = [("v", c) for c in rng.permutation(cols).tolist() if ("v", c) not in order]
    for pair in zip(rest_h, rest_v):
        order += pair
    order += rest_h[len(rest_v):] + rest_v[len(rest_h):]
    lines = []
    for kind, k in order:
        stops = members(kind, k)
        if len(stops) >= 3:
            lines.append(stops)
        if len(lines) == cfg.n_routes // 2:
            break
    if len(lines) < 2:
        raise SyntheticConfigError("the grid cannot hold two crossing lines")
    return lines


@dataclass
class _Service:
    route: Route
    idx: list[int]          # stop indices
    line: int
    departures: np.ndarray  # first-stop departure times

    def board(self, pos: int, not_before: float) -> int:
        """Earliest scheduled time at stop position ``pos`` no earlier than ``not_before``."""
        off = self.route.offsets[pos]
        k = int(np.searchsorted(self.departures, not_before - off, side="left"))
        if k == len(self.departures):
            raise SyntheticConfigError(f"route {self.route.route_id} has no run after "
                                       f"{not_before:.0f}s")
        return int(self.departures[k]) + off

    def runs(self, pos: int, lo: float, hi: float) -> np.ndarray:
        """Scheduled times at stop position ``pos`` within ``[lo, hi]``."""
        times = self.departures + self.route.offsets[pos]
        return times[(times >= lo) & (times <= hi)]


def _services(cfg, lines, rng) -> list[_Service]:
    out = []
    for li, stops in enumerate(lines):
        headway = int(rng.choice(_HEADWAYS_S))
        for d, seq in enumerate((stops, stops[::-1])):
            hops = 20 + np.round(STOP_SPACING_M / 7.0 + rng.uniform(-15, 15, len(seq) - 1))
            offsets = np.concatenate([[0], np.cumsum(hops)]).astype(int)
            first = cfg.service_start + int(rng.integers(0, headway))
            deps = np.arange(first, cfg.service_end - offsets[-1], headway)
            rid = f"R{li:02d}{'AB'[d]}"
            route = Route(rid, tuple(f"S{i:04d}" for i in seq), tuple(offsets.tolist()))
            out.append(_Service(route, list(seq), li, deps))
    return out


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticScenario:
    rng = np.random.default_rng(cfg.seed)
    rows, cols, stops, centers = _grid(cfg)
    registry = StopRegistry(stops)
    lines = _lines(cfg, rows, cols, centers, rng)
    services = _services(cfg, lines, rng)
    is_center = np.zeros(cfg.n_stops, dtype=bool)
    is_center[centers] = True

    # (service, position) pairs at each stop, excluding terminal positions
    serves: list[list[tuple[int, int]]] = [[] for _ in range(cfg.n_stops)]
    lines_at = [set() for _ in range(cfg.n_stops)]
    for si, sv in enumerate(services):
        for p, s in enumerate(sv.idx):
            lines_at[s].add(sv.line)
            if p + 1 < len(sv.idx):
                serves[s].append((si, p))
    mirror = {si: si ^ 1 for si in range(len(services))}
    if cfg.transfer_rate_centers > 0 and not any(len(lines_at[c]) >= 2 for c in centers):
        raise SyntheticConfigError("no transit center is served by two lines")

    weight = rng.lognormal(0.0, 0.8, cfg.n_stops)
    homes = np.flatnonzero(~is_center & np.array([bool(s) for s in serves]))
    home_p = weight[homes] / weight[homes].sum()

    def pick(cands: np.ndarray, boost: bool) -> int:
        w = weight[cands].copy()
        if boost:
            w *= np.where(is_center[cands], _CENTER_BOOST, 1.0)
            w *= np.where([len(lines_at[s]) > 1 for s in cands], _CROSSING_BOOST, 1.0)
        return int(rng.choice(cands, p=w / w.sum()))

    # first legs: home -> A on route R1
    plans = []
    for _ in range(cfg.n_passengers):
        h = int(rng.choice(homes, p=home_p))
        si, p = serves[h][int(rng.integers(len(serves[h])))]
        down = np.array(services[si].idx[p + 1:])
        a = pick(down, boost=True)
        plans.append({"home": h, "r1": si, "a": a, "leg2": None})

    # transfer options at A: another line continuing to a non-center stop
    def options(a: int, line: int):
        return [(sj, q) for sj, q in serves[a] if services[sj].line != line
                and (~is_center[services[sj].idx[q + 1:]]).any()]

    group_of = [pl["a"] if is_center[pl["a"]] else -1 for pl in plans]
    eligible = [bool(options(pl["a"], services[pl["r1"]].line)) for pl in plans]
    chosen = np.zeros(len(plans), dtype=bool)
    t_c_total = 0
    for c in centers:
        members = [i for i, g in enumerate(group_of) if g == c]
        want = round(cfg.transfer_rate_centers * len(members) / (2 - cfg.transfer_rate_centers))
        t_c_total += _choose(rng, chosen, [i for i in members if eligible[i]], want, f"S{c:04d}")
    others = [i for i, g in enumerate(group_of) if g < 0]
    r_o = cfg.transfer_rate_other
    want_o = (len(plans) if r_o >= 1 else
              round(r_o * (len(plans) + len(others) + t_c_total) / (2 * (1 - r_o))))
    _choose(rng, chosen, [i for i in others if eligible[i]], want_o, "other stops")
    if (cfg.transfer_rate_centers > 0 or r_o > 0) and not chosen.any() and plans:
        raise SyntheticConfigError("no passenger can make a feasible transfer")
    for i in np.flatnonzero(chosen).tolist():
        pl = plans[i]
        opts = options(pl["a"], services[pl["r1"]].line)
        sj, q = opts[int(rng.integers(len(opts)))]
        down = np.array(services[sj].idx[q + 1:])
        pl["leg2"] = (sj, pick(down[~is_center[down]], boost=False))

    # timetables: same plan every day, departure times jitter
    start = dt.date.fromisoformat(cfg.first_day)
    days = [(start + dt.timedelta(days=d)).isoformat() for d in range(cfg.n_days)]
    base_out = np.clip(rng.normal(7.75 * 3600, 3600, len(plans)), 5.5 * 3600, 10.5 * 3600)
    base_back = np.clip(rng.normal(17 * 3600, 4500, len(plans)), 14 * 3600, 21 * 3600)
    transactions: list[Transaction] = []
    intended: list[tuple[str, str, int]] = []
    counts = {g: [0, 0] for g in list(centers) + [-1]}  # alightings, transfers
    for day in days:
        rides = rng.random(len(plans)) < cfg.ride_probability
        for i, pl in enumerate(plans):
            card = f"C{i:05d}"
            jitter = rng.normal(0, 600, 2)
            if not rides[i]:
                continue
            out = [(pl["r1"], pl["home"], pl["a"])]
            back = [(mirror[pl["r1"]], pl["a"], pl["home"])]
            if pl["leg2"] is not None:
                sj, d = pl["leg2"]
                out.append((sj, pl["a"], d))
                back.insert(0, (mirror[sj], d, pl["a"]))
            legs = []
            for trip, t0 in ((out, base_out[i] + jitter[0]), (back, base_back[i] + jitter[1])):
                t = _planned_start(services, trip, t0) if len(trip) == 2 else t0
                for n_leg, (si, frm, to) in enumerate(trip):
                    sv = services[si]
                    p, q = sv.idx.index(frm), sv.idx.index(to)
                    board = sv.board(p, t)
                    legs.append((sv.route.route_id, frm, board))
                    t = board + sv.route.offsets[q] - sv.route.offsets[p] + _MIN_CONNECTION_S
                    transfer = n_leg + 1 < len(trip)
                    key = to if is_center[to] else -1
                    counts[key][0] += 1
                    counts[key][1] += transfer
                    if transfer:
                        intended.append((card, day, len(legs) - 1))
            transactions += [Transaction(card, rid, f"S{s:04d}", int(b), day)
                             for rid, s, b in legs]
    transactions.sort(key=lambda t: (t.service_day, t.board_time, t.card_id))
    intended.sort()

    p1 = {f"S{c:04d}": (counts[c][1] / counts[c][0] if counts[c][0] else 0.0) for c in centers}
    p2 = counts[-1][1] / counts[-1][0] if counts[-1][0] else 0.0
    routes = {sv.route.route_id: sv.route for sv in services}
    return SyntheticScenario(registry, routes, transactions, TransferRates(p1, p2), intended)


def _planned_start(services, trip, ready: float) -> float:
    """First-leg run (within the planning window) with the shortest connection."""
    (s1, frm, via), (s2, _, _) = trip
    sv1, sv2 = services[s1], services[s2]
    p, q = sv1.idx.index(frm), sv1.idx.index(via)
    ride = sv1.route.offsets[q] - sv1.route.offsets[p]
    p2 = sv2.idx.index(via)
    best, best_wait = ready, math.inf
    for run in sv1.runs(p, ready, ready + _PLAN_WINDOW_S).tolist():
        arrive = run + ride
        try:
            wait = sv2.board(p2, arrive + _MIN_CONNECTION_S) - arrive
        except SyntheticConfigError:
            break
        if wait < best_wait:
            best, best_wait = run, wait
    return best


def _choose(rng, chosen: np.ndarray, pool: list[int], want: int, where) -> int:
    if want > len(pool):
        log.warning("only %d of %d wanted transfers are feasible at %s", len(pool), want, where)
        want = len(pool)
    if want > 0:
        chosen[rng.choice(np.array(pool), size=want, replace=False)] = True
    return want
