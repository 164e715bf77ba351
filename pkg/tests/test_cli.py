from __future__ import annotations

import filecmp
import random
import subprocess
import sys
from pathlib import Path

import pytest

from netod.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_OK, EXIT_SOLVER, STAGES, main
from netod.config import ConfigError, load_config, parse_config
from netod.evaluate import read_report_csv
from netod.ingest import write_rates, write_segments, write_stops
from netod.synthetic import SyntheticConfig

from oracles import random_rates, random_registry, random_segments

SMALL = """
[run]
seed = 42
output_dir = "{out}"

[synthetic]
n_passengers = 300
n_routes = 8
n_stops = 100
n_days = 2

[solver]
method = "{method}"
tol = 1e-6

[evaluation]
tac_cut_heights = [0, 800, 1600]
"""


def _config(tmp_path: Path, method: str = "ip", out: str = "out", body: str = SMALL) -> Path:
    path = tmp_path / f"{method}_{out}.toml"
    path.write_text(body.format(out=out, method=method))
    return path


def _artifacts(d: Path) -> set[str]:
    return {p.name for p in d.iterdir()}


def _same_files(a: Path, b: Path, skip=("timings.txt",)) -> list[str]:
    names = _artifacts(a)
    assert names == _artifacts(b)
    return [n for n in sorted(names) if n not in skip
            and not filecmp.cmp(a / n, b / n, shallow=False)]


@pytest.fixture(scope="module")
def ip_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ip")
    cfg = _config(tmp)
    assert main(["run", "-c", str(cfg)]) == EXIT_OK
    return tmp, cfg


def test_run_writes_all_artifacts(ip_run):
    tmp, _ = ip_run
    names = _artifacts(tmp / "out")
    for n in ("od_stop.csv", "od_tac_800.csv", "od_tac_1600.csv", "zones_tac_800.csv",
              "report.csv", "run_log.txt", "timings.txt", "solver_report.txt",
              "segments.csv", "truth.csv", "rates.csv", "transfers.csv"):
        assert n in names
    rows = read_report_csv(tmp / "out" / "report.csv")
    assert [r.resolution_label for r in rows] == ["stop", "tac_800", "tac_1600"]
    assert all(r.r_squared <= 1.0 for r in rows)
    log = (tmp / "out" / "run_log.txt").read_text()
    for s in STAGES:
        assert f"[{s}]" in log
    assert "wall_time" not in log


def test_rerun_is_identical(ip_run, tmp_path):
    tmp, _ = ip_run
    cfg = _config(tmp_path)
    assert main(["run", "-c", str(cfg)]) == EXIT_OK
    assert _same_files(tmp / "out", tmp_path / "out") == []
    # rerunning into an existing directory changes nothing either
    assert main(["run", "-c", str(cfg)]) == EXIT_OK
    assert _same_files(tmp / "out", tmp_path / "out") == []


def test_subcommands_compose_to_run(ip_run, tmp_path):
    tmp, _ = ip_run
    cfg = _config(tmp_path)
    for stage in STAGES:
        assert main([stage, "-c", str(cfg)]) == EXIT_OK
    assert _same_files(tmp / "out", tmp_path / "out") == []


def test_qcp_report_carries_method_and_objective(tmp_path):
    cfg = _config(tmp_path, method="qcp")
    assert main(["run", "-c", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    lines = (out / "report.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:5] == ["resolution_label", "cut_height_m", "r_squared",
                          "total_truth", "total_estimate"]
    row = dict(zip(header, lines[1].split(",")))
    assert row["method"] == "qcp_rounded"
    objective = float(row["solver_objective"])
    text = (out / "solver_report.txt").read_text()
    assert "method: qcp_rounded" in text
    assert f"objective: {objective!r}" in text
    assert objective >= 0
    assert not (out / "transfers.csv").exists()


def _segment_instance(tmp_path: Path, n: int) -> Path:
    rng = random.Random(7)
    registry = random_registry(rng, 6)
    write_stops(tmp_path / "stops.csv", registry)
    write_segments(tmp_path / "segs.csv", random_segments(rng, registry, n))
    write_rates(tmp_path / "rates.csv", random_rates(rng, registry))
    cfg = tmp_path / "brute.toml"
    cfg.write_text('[run]\noutput_dir = "out"\n[inputs]\nstops = "stops.csv"\n'
                   'segments = "segs.csv"\nrates = "rates.csv"\n[solver]\nmethod = "brute"\n')
    return cfg


def test_brute_refuses_large_instance(tmp_path, capsys):
    cfg = _segment_instance(tmp_path, 40)
    assert main(["run", "-c", str(cfg)]) == EXIT_SOLVER
    assert "refuses 40 segments" in capsys.readouterr().err


def test_brute_small_instance_without_truth(tmp_path):
    cfg = _segment_instance(tmp_path, 8)
    assert main(["run", "-c", str(cfg)]) == EXIT_OK
    names = _artifacts(tmp_path / "out")
    assert "od_stop.csv" in names and "report.csv" not in names
    assert main(["evaluate", "-c", str(cfg)]) == EXIT_INPUT


@pytest.mark.parametrize("body, key", [
    ("[solver]\nmethod = 'simplex'\n[synthetic]\n", "solver.method"),
    ("[solver]\ntol = 'small'\n[synthetic]\n", "solver.tol"),
    ("[feasibility]\nmax_walk_m = -1\n[synthetic]\n", "feasibility.max_walk_m"),
    ("[synthetic]\nn_passenger = 3\n", "synthetic.n_passenger"),
    ("[evaluation]\ntac_cut_heights = [0, 'x']\n[synthetic]\n", "evaluation.tac_cut_heights[1]"),
    ("[solvers]\n", "solvers"),
    ("[inputs]\nsegments = 's.csv'\n", "inputs.stops"),
    ("[synthetic]\nride_probability = 0\n", "synthetic"),
])
def test_config_errors_name_the_key(tmp_path, capsys, body, key):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(body)
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    assert info.value.key == key
    assert main(["run", "-c", str(cfg)]) == EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_config_file_errors(tmp_path):
    assert main(["run", "-c", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\n")
    assert main(["run", "-c", str(bad)]) == EXIT_CONFIG


def test_config_defaults_and_seed_flow(tmp_path):
    cfg = parse_config({"run": {"seed": 9}, "synthetic": {"ride_probability": 0.5}}, tmp_path)
    assert cfg.max_walk_m == 402.0 and cfg.max_transfer_s == 1800
    assert cfg.method == "ip" and cfg.tol == 1e-6
    assert cfg.synthetic == SyntheticConfig(seed=9, ride_probability=0.5)
    assert cfg.tac_cut_heights == (0, 800, 1600, 2400, 3200)
    assert cfg.output_dir == tmp_path / "out"
    cfg = parse_config({"synthetic": {}, "evaluation": {"tac_radii": [400], "tac_cut_heights": [0]}})
    assert cfg.tac_cut_heights == (0, 800)


def test_flag_overrides(tmp_path):
    cfg = _config(tmp_path)
    rc = main(["run", "-c", str(cfg), "--output-dir", str(tmp_path / "o2"),
               "--max-walk-m", "300", "--max-transfer-min", "20",
               "--tac-cut-height", "0,2400"])
    assert rc == EXIT_OK
    out = tmp_path / "o2"
    assert (out / "od_tac_2400.csv").exists() and not (out / "od_tac_800.csv").exists()
    assert [r.resolution_label for r in read_report_csv(out / "report.csv")] == ["stop", "tac_2400"]
    assert main(["run", "-c", str(cfg), "--max-walk-m", "0"]) == EXIT_CONFIG
    assert main(["run", "-c", str(cfg), "--tac-radius", "-5"]) == EXIT_CONFIG


def test_invalid_input_exit_code(tmp_path, capsys):
    (tmp_path / "stops.csv").write_text("stop_id,lat,lon,is_center\nA,42,-83,1\nA,42,-83,0\n")
    (tmp_path / "segs.csv").write_text("segment_id,route_id,board_stop,alight_stop,"
                                       "board_time,alight_time\n")
    (tmp_path / "rates.csv").write_text("scope,stop_id,rate\nother,,0.1\n")
    cfg = tmp_path / "c.toml"
    cfg.write_text('[inputs]\nstops = "stops.csv"\nsegments = "segs.csv"\nrates = "rates.csv"\n')
    assert main(["run", "-c", str(cfg)]) == EXIT_INPUT
    assert "stops.csv" in capsys.readouterr().err


def test_stage_out_of_order_is_input_error(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["solve", "-c", str(cfg)]) == EXIT_INPUT
    assert "generate" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = _config(tmp_path, body="[synthetic]\nn_passengers = 0\n")
    proc = subprocess.run([sys.executable, "-m", "netod", "run", "-c", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "n_passengers" in proc.stderr
