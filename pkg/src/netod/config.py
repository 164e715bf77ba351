"""Pipeline configuration: a TOML file with nested sections, checked against a schema.

Every error names the offending key path (``solver.tol``) so a broken
config can be fixed without reading the code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .aggregate import tac_cut_height
from .ingest import parse_time
from .synthetic import SyntheticConfig, SyntheticConfigError

SOLVER_METHODS = ("ip", "qcp", "brute")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class Inputs:
    stops: Optional[Path] = None
    segments: Optional[Path] = None
    rates: Optional[Path] = None
    truth: Optional[Path] = None
    transactions: Optional[Path] = None
    routes: Optional[Path] = None
    taz: Optional[Path] = None


@dataclass(frozen=True)
class PipelineConfig:
    output_dir: Path
    seed: int = 0
    synthetic: Optional[SyntheticConfig] = None
    inputs: Inputs = field(default_factory=Inputs)
    max_walk_m: float = 402.0
    max_transfer_min: float = 30.0
    method: str = "ip"
    tol: float = 1e-6
    max_iter: int = 100_000
    max_brute_segments: int = 16
    tac_cut_heights: tuple[float, ...] = (0.0, 800.0, 1600.0, 2400.0, 3200.0)

    @property
    def max_transfer_s(self) -> int:
        return int(round(self.max_transfer_min * 60))


# section -> key -> expected kind
_SCHEMA: dict[str, dict[str, str]] = {
    "run": {"seed": "int", "output_dir": "str"},
    "synthetic": {"n_passengers": "int", "n_routes": "int", "n_stops": "int",
                  "transfer_rate_centers": "float", "transfer_rate_other": "float",
                  "n_days": "int", "first_day": "str",
                  "service_start": "time", "service_end": "time",
                  "ride_probability": "float"},
    "inputs": {k: "str" for k in Inputs.__dataclass_fields__},
    "feasibility": {"max_walk_m": "float", "max_transfer_min": "float"},
    "solver": {"method": "str", "tol": "float", "max_iter": "int", "max_brute_segments": "int"},
    "evaluation": {"tac_cut_heights": "floats", "tac_radii": "floats"},
}


def _check(key: str, value: Any, kind: str):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if kind == "time":
        if isinstance(value, str):
            try:
                return parse_time(value)
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        return _check(key, value, "int")
    if kind == "floats":
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list of numbers, got {value!r}")
        return tuple(_check(f"{key}[{i}]", v, "float") for i, v in enumerate(value))
    raise AssertionError(kind)


def parse_config(data: Mapping[str, Any], base_dir: Union[str, Path] = ".") -> PipelineConfig:
    """Validate a parsed TOML document; relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    sections: dict[str, dict[str, Any]] = {}
    for name, body in data.items():
        if name not in _SCHEMA:
            raise ConfigError(name, f"unknown section (expected one of {', '.join(_SCHEMA)})")
        if not isinstance(body, Mapping):
            raise ConfigError(name, "expected a table")
        checked = {}
        for key, value in body.items():
            path = f"{name}.{key}"
            if key not in _SCHEMA[name]:
                raise ConfigError(path, "unknown key")
            checked[key] = _check(path, value, _SCHEMA[name][key])
        sections[name] = checked

    run = sections.get("run", {})
    seed = run.get("seed", 0)
    if seed < 0:
        raise ConfigError("run.seed", "must be nonnegative")
    out = base / run.get("output_dir", "out")

    synthetic = None
    if "synthetic" in sections:
        try:
            synthetic = SyntheticConfig(seed=seed, **sections["synthetic"])
        except SyntheticConfigError as exc:
            raise ConfigError("synthetic", str(exc)) from None
        except ValueError as exc:  # bad first_day
            raise ConfigError("synthetic.first_day", str(exc)) from None
    inputs = Inputs(**{k: base / v for k, v in sections.get("inputs", {}).items()})
    if synthetic is None:
        _check_inputs(inputs)
    elif any(getattr(inputs, k) is not None for k in ("stops", "segments", "transactions")):
        raise ConfigError("inputs", "give either a [synthetic] section or input files, not both")

    feas = sections.get("feasibility", {})
    solver = sections.get("solver", {})
    ev = sections.get("evaluation", {})
    cfg = PipelineConfig(
        output_dir=out, seed=seed, synthetic=synthetic, inputs=inputs,
        max_walk_m=feas.get("max_walk_m", 402.0),
        max_transfer_min=feas.get("max_transfer_min", 30.0),
        method=solver.get("method", "ip"),
        tol=solver.get("tol", 1e-6),
        max_iter=solver.get("max_iter", 100_000),
        max_brute_segments=solver.get("max_brute_segments", 16),
    )
    if "tac_cut_heights" in ev or "tac_radii" in ev:
        cfg = with_cut_heights(cfg, ev.get("tac_cut_heights", ()), ev.get("tac_radii", ()),
                               key="evaluation")
    return check_config(cfg)


def _check_inputs(inputs: Inputs) -> None:
    if inputs.stops is None:
        raise ConfigError("inputs.stops", "required when there is no [synthetic] section")
    if inputs.segments is None and inputs.transactions is None:
        raise ConfigError("inputs", "need segments or transactions (with routes)")
    if inputs.segments is not None and inputs.transactions is not None:
        raise ConfigError("inputs", "give segments or transactions, not both")
    if inputs.transactions is not None and inputs.routes is None:
        raise ConfigError("inputs.routes", "required with transactions")
    if inputs.segments is not None and inputs.rates is None:
        raise ConfigError("inputs.rates", "required with segments")
    for key, path in vars(inputs).items():
        if path is not None and not path.is_file():
            raise ConfigError(f"inputs.{key}", f"no such file {str(path)!r}")


def with_cut_heights(cfg: PipelineConfig, heights=(), radii=(), key: str = "") -> PipelineConfig:
    """Replace the TAC sweep with ``heights`` plus the cut heights of ``radii``."""
    for i, r in enumerate(radii):
        if r < 0:
            raise ConfigError(f"{key}.tac_radii[{i}]" if key else "--tac-radius",
                              "must be nonnegative")
    merged = sorted(set(heights) | {tac_cut_height(r) for r in radii})
    return replace(cfg, tac_cut_heights=tuple(merged))


def check_config(cfg: PipelineConfig) -> PipelineConfig:
    """Range checks shared by the file and command-line overrides."""
    if not cfg.max_walk_m > 0:
        raise ConfigError("feasibility.max_walk_m", "must be positive")
    if not cfg.max_transfer_s > 0:
        raise ConfigError("feasibility.max_transfer_min", "must be positive")
    if cfg.method not in SOLVER_METHODS:
        raise ConfigError("solver.method", f"expected one of {', '.join(SOLVER_METHODS)}, "
                                           f"got {cfg.method!r}")
    if not cfg.tol > 0:
        raise ConfigError("solver.tol", "must be positive")
    if cfg.max_iter <= 0:
        raise ConfigError("solver.max_iter", "must be positive")
    if cfg.max_brute_segments <= 0:
        raise ConfigError("solver.max_brute_segments", "must be positive")
    if any(not h >= 0 for h in cfg.tac_cut_heights):
        raise ConfigError("evaluation.tac_cut_heights", "cut heights must be nonnegative")
    return cfg


def load_config(path: Union[str, Path]) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read config {str(path)!r}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path}: {exc}") from None
    return parse_config(data, path.parent)
