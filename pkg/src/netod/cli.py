"""Batch command line: ``netod run --config pipeline.toml``.

The stages communicate only through files in the output directory, so
running ``generate``, ``chain``, ``solve``, ``aggregate`` and ``evaluate``
one after another leaves the same artifacts as ``run``. Each stage owns a
section of ``run_log.txt`` (deterministic) and of ``timings.txt`` (wall
clock, excluded from reproducibility checks).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .aggregate import AggregationError, aggregate_od, hca_clusters
from .chaining import (ChainError, ChainParams, read_routes, read_transactions, read_truth,
                       trip_chain, write_routes, write_transactions, write_truth)
from .config import ConfigError, PipelineConfig, check_config, load_config, with_cut_heights
from .evaluate import Resolution, empirical_rates, evaluate_run, write_report_csv
from .feasibility import build_feasibility, observed_transfer_targets
from .ingest import (IngestError, parse_rates, parse_segments, parse_stops, parse_zones,
                     write_rates, write_segments, write_stops, write_zones)
from .model import FeasibilityParams, ZoneMap, validate_instance
from .odmatrix import assemble_od_fractional, assemble_od_integral, read_od_csv, write_od_csv
from .solver import SolverError, SolverReport, round_relaxation, solve_brute, solve_ip, solve_qcp
from .synthetic import SyntheticConfigError, generate_synthetic

log = logging.getLogger("netod")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3, 4
STAGES = ("generate", "chain", "solve", "aggregate", "evaluate")

STOPS, ROUTES, TRANSACTIONS = "stops.csv", "routes.csv", "transactions.csv"
SEGMENTS, TRUTH, RATES, TAZ = "segments.csv", "truth.csv", "rates.csv", "zones_taz.csv"
TRANSFERS, SOLVER_REPORT, REPORT = "transfers.csv", "solver_report.txt", "report.csv"
RUN_LOG, TIMINGS = "run_log.txt", "timings.txt"


class InputError(ValueError):
    """Input data that parses but cannot be used."""


def resolution_label(cut_height_m: float) -> str:
    return f"tac_{cut_height_m:g}"


def _update_sections(path: Path, stage: str, lines: Sequence[str]) -> None:
    """Rewrite ``stage``'s section of a ``[stage]``-sectioned text file."""
    sections: dict[str, list[str]] = {}
    if path.exists():
        current = None
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.startswith("[") and line.endswith("]") and line[1:-1] in STAGES:
                current = line[1:-1]
                sections[current] = []
            elif current is not None and line:
                sections[current].append(line)
    sections[stage] = list(lines)
    text = "".join(f"[{s}]\n" + "".join(f"{x}\n" for x in sections[s]) + "\n"
                   for s in STAGES if s in sections)
    path.write_text(text, encoding="utf-8")


class _Stage:
    """Collects the deterministic log lines and timings of one stage."""

    def __init__(self, cfg: PipelineConfig, name: str):
        self.cfg, self.name = cfg, name
        self.lines: list[str] = []
        self.timings: list[str] = []
        self.start = time.perf_counter()

    def note(self, line: str) -> None:
        self.lines.append(line)
        log.info("%s: %s", self.name, line)

    def path(self, name: str) -> Path:
        return self.cfg.output_dir / name

    def finish(self) -> None:
        self.timings.append(f"wall_time: {time.perf_counter() - self.start:.3f}")
        _update_sections(self.path(RUN_LOG), self.name, self.lines)
        _update_sections(self.path(TIMINGS), self.name, self.timings)


def _require(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise InputError(f"{path} is missing; run the {stage} stage first")
    return path


def stage_generate(cfg: PipelineConfig) -> None:
    """Write the scenario (synthetic) or normalized copies of the input files."""
    st = _Stage(cfg, "generate")
    if cfg.synthetic is not None:
        sc = generate_synthetic(cfg.synthetic)
        write_stops(st.path(STOPS), sc.registry)
        write_routes(st.path(ROUTES), sc.routes)
        write_transactions(st.path(TRANSACTIONS), sc.transactions)
        st.note(f"synthetic seed: {cfg.synthetic.seed}")
        st.note(f"stops: {len(sc.registry)}  routes: {len(sc.routes)}  "
                f"transactions: {len(sc.transactions)}")
        st.note(f"intended transfers: {len(sc.intended_transfers)}")
        st.finish()
        return
    inp = cfg.inputs
    registry = parse_stops(inp.stops)
    write_stops(st.path(STOPS), registry)
    if inp.transactions is not None:
        routes = read_routes(inp.routes, registry)
        write_routes(st.path(ROUTES), routes)
        write_transactions(st.path(TRANSACTIONS), read_transactions(inp.transactions, registry))
    else:
        segments = parse_segments(inp.segments, registry)
        write_segments(st.path(SEGMENTS), segments)
        if inp.truth is not None:
            write_truth(st.path(TRUTH), segments, read_truth(inp.truth, segments))
    if inp.rates is not None:
        write_rates(st.path(RATES), parse_rates(inp.rates, registry))
    if inp.taz is not None:
        write_zones(st.path(TAZ), parse_zones(inp.taz, registry), registry)
    st.note(f"stops: {len(registry)} (from {inp.stops.name})")
    st.finish()


def stage_chain(cfg: PipelineConfig) -> None:
    """Trip-chain transactions into segments, ground truth and observed rates."""
    st = _Stage(cfg, "chain")
    registry = parse_stops(_require(st.path(STOPS), "generate"))
    if not st.path(TRANSACTIONS).is_file():
        _require(st.path(SEGMENTS), "generate")
        st.note("segments supplied directly; nothing to chain")
        st.finish()
        return
    routes = read_routes(_require(st.path(ROUTES), "generate"), registry)
    transactions = read_transactions(st.path(TRANSACTIONS), registry)
    result = trip_chain(transactions, registry, routes,
                        ChainParams(cfg.max_walk_m, cfg.max_transfer_s))
    write_segments(st.path(SEGMENTS), result.segments)
    write_truth(st.path(TRUTH), result.segments, result.truth)
    if cfg.inputs.rates is None:
        rates = empirical_rates(result.segments, result.truth, registry)
        write_rates(st.path(RATES), rates)
        st.note("observed rates taken from the chained ground truth")
    st.note(f"card-days kept: {result.kept_cards}  dropped: {result.dropped_cards}")
    st.note(f"segments: {len(result.segments)}  transfers: {len(result.truth.arcs())}")
    st.finish()


def stage_solve(cfg: PipelineConfig) -> None:
    st = _Stage(cfg, "solve")
    registry = parse_stops(_require(st.path(STOPS), "generate"))
    segments = parse_segments(_require(st.path(SEGMENTS), "chain"), registry)
    rates = parse_rates(_require(st.path(RATES), "chain"), registry)
    problems = validate_instance(segments, registry, rates)
    if problems:
        shown = "; ".join(str(v) for v in problems[:10])
        raise InputError(f"{len(problems)} instance violations: {shown}")
    t0 = time.perf_counter()
    graph = build_feasibility(segments, registry, FeasibilityParams(cfg.max_walk_m,
                                                                    cfg.max_transfer_s))
    targets = observed_transfer_targets(segments, registry, rates)
    st.timings.append(f"feasibility_time: {time.perf_counter() - t0:.3f}")
    st.note(f"segments: {len(graph)}  candidate transfers: {graph.n_arcs}  "
            f"target transfers: {targets.n}")
    zone_map = ZoneMap.identity(registry)
    if cfg.method == "qcp":
        t0 = time.perf_counter()
        frac = solve_qcp(graph, registry, rates, tol=cfg.tol, max_iter=cfg.max_iter)
        rounded = round_relaxation(frac, graph, targets)
        report = SolverReport(frac.objective, time.perf_counter() - t0, "qcp_rounded",
                              frac.iterations, {"kkt_residual": frac.kkt_residual,
                                                "threshold": rounded.threshold,
                                                "first_legs": float(len(rounded.T1)),
                                                "second_legs": float(len(rounded.T2))})
        od = assemble_od_fractional(segments, rounded, zone_map)
        if st.path(TRANSFERS).exists():
            st.path(TRANSFERS).unlink()
    else:
        if cfg.method == "ip":
            assignment, report = solve_ip(graph, targets)
        else:
            assignment, report = solve_brute(graph, registry, rates, targets, "l1",
                                             max_segments=cfg.max_brute_segments)
        write_truth(st.path(TRANSFERS), segments, assignment)
        od = assemble_od_integral(segments, assignment, zone_map)
    write_od_csv(st.path("od_stop.csv"), od)
    st.path(SOLVER_REPORT).write_text(report.to_text(timing=False), encoding="utf-8")
    st.lines += report.to_text(timing=False).splitlines()
    st.note(f"O-D total: {od.total():g}")
    st.timings.append(f"solver_time: {report.wall_time:.3f}")
    st.finish()


def _resolutions(cfg: PipelineConfig, registry) -> list[Resolution]:
    out = [Resolution("stop", 0.0, ZoneMap.identity(registry))]
    for h in cfg.tac_cut_heights:
        if h == 0:
            continue  # the stop level itself
        out.append(Resolution(resolution_label(h), h, hca_clusters(registry, h)))
    taz = cfg.output_dir / TAZ
    if taz.is_file():
        out.append(Resolution("taz", math.nan, parse_zones(taz, registry)))
    return out


def stage_aggregate(cfg: PipelineConfig) -> None:
    st = _Stage(cfg, "aggregate")
    registry = parse_stops(_require(st.path(STOPS), "generate"))
    od = read_od_csv(_require(st.path("od_stop.csv"), "solve"), ZoneMap.identity(registry))
    for res in _resolutions(cfg, registry)[1:]:
        if res.label != "taz":
            write_zones(st.path(f"zones_{res.label}.csv"), res.zone_map, registry)
        coarse = aggregate_od(od, res.zone_map)
        write_od_csv(st.path(f"od_{res.label}.csv"), coarse)
        st.note(f"{res.label}: {len(res.zone_map.zones)} zones, total {coarse.total():g}")
    st.finish()


def stage_evaluate(cfg: PipelineConfig) -> None:
    st = _Stage(cfg, "evaluate")
    registry = parse_stops(_require(st.path(STOPS), "generate"))
    segments = parse_segments(_require(st.path(SEGMENTS), "chain"), registry)
    if not st.path(TRUTH).is_file():
        raise InputError("no ground truth: supply inputs.truth or transactions to chain")
    truth = read_truth(st.path(TRUTH), segments)
    report = SolverReport.from_text(_require(st.path(SOLVER_REPORT), "solve")
                                    .read_text(encoding="utf-8"))
    estimate = read_od_csv(_require(st.path("od_stop.csv"), "solve"),
                           ZoneMap.identity(registry))
    rows = evaluate_run(segments, truth, estimate, _resolutions(cfg, registry))
    write_report_csv(st.path(REPORT), rows, report.method, report.objective)
    for r in rows:
        st.note(f"{r.resolution_label}: r_squared {r.r_squared:.6f}")
    st.finish()


_STAGE_FUNCS: dict[str, Callable[[PipelineConfig], None]] = {
    "generate": stage_generate, "chain": stage_chain, "solve": stage_solve,
    "aggregate": stage_aggregate, "evaluate": stage_evaluate,
}


def run_pipeline(cfg: PipelineConfig) -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    for name in (RUN_LOG, TIMINGS):
        (cfg.output_dir / name).unlink(missing_ok=True)
    for name in STAGES:
        if name == "evaluate" and not (cfg.output_dir / TRUTH).is_file():
            log.warning("no ground truth available; skipping evaluation")
            continue
        _STAGE_FUNCS[name](cfg)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", required=True, help="pipeline TOML file")
    common.add_argument("--output-dir", help="override run.output_dir")
    common.add_argument("--max-walk-m", type=float, help="walking threshold in meters (402)")
    common.add_argument("--max-transfer-min", type=float,
                        help="transfer time threshold in minutes (30)")
    common.add_argument("--tac-cut-heights", "--tac-cut-height", type=_floats, metavar="H1,H2,...",
                        help="TAC dendrogram cut heights in meters")
    common.add_argument("--tac-radius", type=_floats, metavar="R1,R2,...",
                        help="TAC radii in meters (cut height 2r)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="netod", description="Transit O-D estimation "
                                     "from trip segments via transfer identification.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="all stages in order")
    helps = {"generate": "synthetic scenario or normalized input copies",
             "chain": "trip-chain transactions into segments and ground truth",
             "solve": "identify transfers and write the stop-level O-D",
             "aggregate": "TAC/TAZ zone maps and aggregated O-D matrices",
             "evaluate": "R^2 of the estimate against the ground truth"}
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if args.output_dir is not None:
        cfg = replace(cfg, output_dir=Path(args.output_dir))
    if args.max_walk_m is not None:
        cfg = replace(cfg, max_walk_m=args.max_walk_m)
    if args.max_transfer_min is not None:
        cfg = replace(cfg, max_transfer_min=args.max_transfer_min)
    if args.tac_cut_heights is not None or args.tac_radius is not None:
        cfg = with_cut_heights(cfg, args.tac_cut_heights or (), args.tac_radius or ())
    return check_config(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            run_pipeline(cfg)
        else:
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
            _STAGE_FUNCS[args.command](cfg)
    except SyntheticConfigError as exc:
        print(f"config error: synthetic: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (IngestError, ChainError, InputError, AggregationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
