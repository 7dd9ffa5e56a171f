"""Command-line front end: ``estimate``, ``representation`` and ``diagnose``.

Settings come from an optional TOML file (``--config``) and from flags;
flags win.  Relative paths inside a config file are resolved against the
file's directory.  Results go to ``--out`` / ``--out-dir`` (or stdout for
the JSON reports); failures print one JSON error object on stderr.

Exit codes: 0 ok, 1 configuration or I/O, 2 numerical or solver failure,
3 a diagnostic check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import diagnostics as dg
from .core import ParamInterval, SolveOptions, WeightedSample, estimate, theta1_value
from .errors import ConfigError, NumericalError, PsiError
from .models import make_model
from .representation import (
    ConvexifiedLoss,
    EnvelopeConfig,
    MinimizeOptions,
    argmin_objective,
    build_monotone_weight,
    lower_envelope,
    objective_sum,
    one_sided_fill,
    q_star_envelope,
    working_grid,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_DIAGNOSTIC = 3


class CliError(Exception):
    """Configuration or I/O problem detected by the front end."""

    def __init__(self, code: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.extra = extra


@dataclass
class RunConfig:
    model: str = ""
    params: dict = field(default_factory=dict)
    data_path: Optional[Path] = None
    observations: Optional[list] = None
    weights: Optional[list] = None
    weights_col: str = "w"
    grid: Optional[tuple] = None
    tau: Optional[float] = None
    family: Optional[list] = None
    tol: Optional[float] = None
    residual_tol: Optional[float] = None
    argmin_tol: float = 1e-7
    require_richness: bool = False
    pairs: object = "auto"
    grid_size: int = dg.DEFAULT_GRID
    workers: int = 1
    out: Optional[Path] = None
    out_dir: Optional[Path] = None


# ----------------------------------------------------------------- formatting


def fmt(value) -> str:
    """Shortest decimal that round-trips to the same double."""
    return repr(float(value))


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    v = float(obj)
    return v if math.isfinite(v) else None


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    except OSError as err:
        raise CliError("IO_WRITE_FAILED", f"cannot write {out}: {err}") from None


# -------------------------------------------------------------------- parsing


def _floats(text: str, what: str) -> list:
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise CliError("CONFIG_INVALID", f"{what}: expected comma-separated numbers, got {text!r}") from None


def _as_float_list(value, what: str) -> list:
    if isinstance(value, str):
        return _floats(value, what)
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise CliError("CONFIG_INVALID", f"{what}: expected a list of numbers") from None


def read_data(path: Path, weights_col: str = "w"):
    """Observations from column ``x`` and weights from ``weights_col`` (default 1)."""
    if not path.is_file():
        raise CliError("IO_NOT_FOUND", f"data file not found: {path}")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip() for h in (reader.fieldnames or [])]
            if "x" not in header:
                raise CliError("IO_PARSE", f"{path}: missing column 'x'")
            reader.fieldnames = header
            xs, ws = [], []
            for line, row in enumerate(reader, start=2):
                try:
                    xs.append(float(row["x"]))
                    raw = row.get(weights_col) if weights_col in header else None
                    ws.append(1.0 if raw is None or raw.strip() == "" else float(raw))
                except (TypeError, ValueError):
                    raise CliError("IO_PARSE", f"{path}:{line}: not a number") from None
    except OSError as err:
        raise CliError("IO_READ_FAILED", f"cannot read {path}: {err}") from None
    return xs, ws


def _read_family(spec: str, base: Path) -> list:
    path = (base / spec) if not os.path.isabs(spec) else Path(spec)
    if path.suffix.lower() == ".csv" or path.is_file():
        xs, _ = read_data(path)
        return xs
    return _floats(spec, "family")


def _parse_grid(value) -> tuple:
    if isinstance(value, dict):
        try:
            parts = [value["lo"], value["hi"], value.get("points", 512)]
        except KeyError:
            raise CliError("CONFIG_INVALID", "grid needs lo and hi") from None
    elif isinstance(value, str):
        parts = value.split(",")
    else:
        parts = list(value)
    if len(parts) != 3:
        raise CliError("CONFIG_INVALID", f"grid must be lo,hi,points; got {value!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(float(parts[2]))
    except (TypeError, ValueError):
        raise CliError("CONFIG_INVALID", f"grid must be lo,hi,points; got {value!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi and n >= 2):
        raise CliError("CONFIG_INVALID", f"grid needs finite lo < hi and at least 2 points; got {value!r}")
    return lo, hi, n


def _parse_pairs(value):
    if value is None or value == "auto":
        return "auto"
    items = value if isinstance(value, list) else str(value).replace(";", ",").split(",")
    pairs = []
    for item in items:
        try:
            i, j = (int(v) for v in (item if isinstance(item, list) else str(item).split(":")))
        except (TypeError, ValueError):
            raise CliError("CONFIG_INVALID", f"pairs must be 'auto' or i:j,...; got {value!r}") from None
        pairs.append((i, j))
    return pairs


def _load_config(path: Optional[str]):
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    if not p.is_file():
        raise CliError("IO_NOT_FOUND", f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh), p.resolve().parent
    except tomllib.TOMLDecodeError as err:
        raise CliError("CONFIG_PARSE", f"{p}: {err}") from None


def build_config(args) -> RunConfig:
    raw, base = _load_config(args.config)
    cfg = RunConfig()
    model = raw.get("model", {})
    if isinstance(model, str):
        model = {"name": model}
    data = raw.get("data", {})
    rep = raw.get("representation", {})
    diag = raw.get("diagnose", {})
    tols = raw.get("tolerances", {})
    output = raw.get("output", {})

    cfg.model = args.model or model.get("name", "")
    cfg.params = {k: v for k, v in model.get("params", {}).items()}
    for item in args.param or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise CliError("CONFIG_INVALID", f"--param expects key=value, got {item!r}")
        cfg.params[key.strip()] = value.strip()
    if not cfg.model:
        raise CliError("CONFIG_INVALID", "no model given (use --model or [model] name)")

    def resolve(p, rel_to):
        return Path(p) if os.path.isabs(p) else rel_to / p

    if args.data is not None:
        cfg.data_path = Path(args.data)
    elif "path" in data:
        cfg.data_path = resolve(data["path"], base)
    if args.obs is not None:
        cfg.observations = _floats(args.obs, "--obs")
    elif "obs" in data:
        cfg.observations = _as_float_list(data["obs"], "data.obs")
    if args.weights is not None:
        cfg.weights = _floats(args.weights, "--weights")
    elif "weights" in data:
        cfg.weights = _as_float_list(data["weights"], "data.weights")
    cfg.weights_col = args.weights_col or data.get("weights_col", "w")

    grid = args.grid if args.grid is not None else raw.get("grid", rep.get("grid"))
    cfg.grid = _parse_grid(grid) if grid is not None else None
    tau = args.tau if args.tau is not None else rep.get("tau")
    cfg.tau = float(tau) if tau is not None else None
    family = args.family if args.family is not None else rep.get("family")
    if family is not None:
        if isinstance(family, str):
            cfg.family = _read_family(family, Path.cwd() if args.family is not None else base)
        else:
            cfg.family = _as_float_list(family, "family")
    if args.require_richness is not None:
        cfg.require_richness = args.require_richness
    else:
        cfg.require_richness = bool(rep.get("require_richness", False))

    cfg.tol = args.tol if args.tol is not None else tols.get("tol")
    cfg.residual_tol = tols.get("residual_tol")
    cfg.argmin_tol = float(tols.get("argmin_tol", cfg.argmin_tol))
    cfg.pairs = _parse_pairs(args.pairs if args.pairs is not None else diag.get("pairs", "auto"))
    cfg.grid_size = int(diag.get("grid_size", cfg.grid_size))
    cfg.workers = int(args.workers if args.workers is not None else diag.get("workers", 1))
    if cfg.workers < 1:
        raise CliError("CONFIG_INVALID", "--workers must be at least 1")

    out = args.out if args.out is not None else output.get("out")
    if out is not None:
        cfg.out = Path(out) if args.out is not None else resolve(out, base)
    out_dir = getattr(args, "out_dir", None)
    if out_dir is None and "out_dir" in output:
        out_dir = resolve(output["out_dir"], base)
    cfg.out_dir = Path(out_dir) if out_dir is not None else None
    return cfg


def _solve_options(cfg: RunConfig) -> SolveOptions:
    kwargs = {}
    if cfg.tol is not None:
        kwargs["tol"] = float(cfg.tol)
    if cfg.residual_tol is not None:
        kwargs["residual_tol"] = float(cfg.residual_tol)
    if any(not (v > 0) for v in kwargs.values()):
        raise CliError("CONFIG_INVALID", "tolerances must be positive")
    return SolveOptions(**kwargs)


def _sample(cfg: RunConfig, required: bool = True) -> Optional[WeightedSample]:
    if cfg.observations is not None:
        xs, ws = cfg.observations, [1.0] * len(cfg.observations)
    elif cfg.data_path is not None:
        xs, ws = read_data(cfg.data_path, cfg.weights_col)
    elif required:
        raise CliError("CONFIG_INVALID", "no data given (use --data or --obs)")
    else:
        return None
    if cfg.weights is not None:
        if len(cfg.weights) != len(xs):
            raise CliError("CONFIG_INVALID_WEIGHTS", f"{len(cfg.weights)} weights for {len(xs)} observations")
        ws = cfg.weights
    if not xs:
        raise CliError("IO_PARSE", "no observations")
    return WeightedSample(tuple(xs), tuple(ws))


def _grid_array(model, cfg: RunConfig) -> np.ndarray:
    lo, hi, n = cfg.grid
    if not (model.theta.lo < lo and hi < model.theta.hi):
        raise CliError(
            "CONFIG_GRID_OUT_OF_THETA",
            f"grid [{lo}, {hi}] is not inside the parameter interval ({model.theta.lo}, {model.theta.hi})",
        )
    return np.linspace(lo, hi, n)


# ------------------------------------------------------------------- commands


def cmd_estimate(cfg: RunConfig) -> int:
    model = make_model(cfg.model, cfg.params)
    sample = _sample(cfg)
    res = estimate(model, sample, _solve_options(cfg))
    report = {
        "theta": res.theta,
        "bracket": [res.bracket_lo, res.bracket_hi],
        "residual": res.residual,
        "crossing": res.crossing.value,
        "n": sample.n,
        "sum_weights": sample.total_weight,
    }
    _emit(dump_json(report), cfg.out)
    return EXIT_OK


def _gap_stats(env) -> dict:
    gap = env.gap
    finite = gap[np.isfinite(gap)]
    return {
        "points": int(gap.size),
        "two_sided_points": int(finite.size),
        "one_sided_points": int(gap.size - finite.size),
        "min": float(finite.min()) if finite.size else None,
        "max": float(finite.max()) if finite.size else None,
        "mean": math.fsum(finite) / finite.size if finite.size else None,
    }


def _agreement(values: dict, tol: float) -> dict:
    present = {k: v for k, v in values.items() if v is not None}
    worst = 0.0
    keys = sorted(present)
    for i, a in enumerate(keys):
        for b in keys[i + 1 :]:
            scale = 1.0 + max(abs(present[a]), abs(present[b]))
            worst = max(worst, abs(present[a] - present[b]) / scale)
    return {
        **values,
        "tolerance": tol,
        "max_scaled_difference": worst,
        "pass": bool(len(present) >= 2 and worst <= 2.0 * tol),
    }


def cmd_representation(cfg: RunConfig) -> int:
    model = make_model(cfg.model, cfg.params)
    if cfg.grid is None:
        raise CliError("CONFIG_INVALID", "representation needs --grid lo,hi,points")
    if not cfg.family:
        raise CliError("CONFIG_INVALID", "representation needs a family (--family)")
    if cfg.out_dir is None:
        raise CliError("CONFIG_INVALID", "representation needs --out-dir")
    grid = _grid_array(model, cfg)
    family = list(cfg.family)
    sample = _sample(cfg, required=False) or WeightedSample.uniform(tuple(family))
    tau = cfg.tau
    if tau is not None and not grid[0] <= tau <= grid[-1]:
        raise CliError("CONFIG_TAU_OUTSIDE_GRID", f"tau={tau!r} outside grid [{grid[0]}, {grid[-1]}]")

    env = q_star_envelope(model, EnvelopeConfig(tuple(family), grid, require_richness=cfg.require_richness))
    q = lower_envelope(
        model, family, require_richness=cfg.require_richness, fill_one_sided=not cfg.require_richness
    )
    weight = build_monotone_weight(q, grid, tau=tau)
    loss = ConvexifiedLoss(model, weight)

    out_dir = cfg.out_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise CliError("IO_WRITE_FAILED", f"cannot create {out_dir}: {err}") from None
    write_csv(out_dir / "envelope.csv", ["t", "q_lower", "q_upper", "gap"], zip(grid, env.q_lower, env.q_upper, env.gap))
    log_p = weight.log_p(grid)
    write_csv(out_dir / "weight.csv", ["t", "log_p", "p"], zip(grid, log_p, np.exp(log_p)))

    loss_files = []
    inside = []
    for i, x in enumerate(sample.observations):
        th = theta1_value(model, x)
        if grid[0] <= th <= grid[-1]:
            inside.append(i)
            loss_files.append({"observation": i, "x": float(x), "theta1": th, "file": f"loss_{i:03d}.csv"})
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        columns = list(pool.map(lambda i: loss.table(sample.observations[i])(grid), inside))
    for entry, column in zip(loss_files, columns):
        write_csv(out_dir / entry["file"], ["t", "rho_star"], zip(grid, column))

    res = estimate(model, sample)
    mopts = MinimizeOptions(tol=cfg.argmin_tol)
    rho = getattr(model, "rho", None)
    a_rho = argmin_objective(objective_sum(rho, sample), model.theta, mopts) if rho is not None else None
    active_inside = all(i in inside for i, w in enumerate(sample.weights) if w > 0)
    span = ParamInterval(float(grid[0]), float(grid[-1]))
    a_star = argmin_objective(loss.total(sample), span, mopts) if active_inside else None

    products = dg.DiagnosticReport()
    for x in family:
        products.add(dg.check_decreasing_product(model, weight, x, grid, rel_tol=1e-6))

    summary = {
        "model": {"name": cfg.model, "params": getattr(model, "params", dict)()},
        "grid": {"lo": float(grid[0]), "hi": float(grid[-1]), "points": int(grid.size)},
        "tau": weight.tau,
        "family_size": len(family),
        "require_richness": cfg.require_richness,
        "envelope_gap": _gap_stats(env),
        "weight": {"p_min": float(np.exp(log_p.min())), "p_max": float(np.exp(log_p.max()))},
        "decreasing_products": products.counts(),
        "argmin": _agreement({"rho": a_rho, "rho_star": a_star, "estimate": res.theta}, cfg.argmin_tol),
        "loss_tables": loss_files,
    }
    text = dump_json(summary)
    _emit(text, out_dir / "summary.json")
    if cfg.out is not None:
        _emit(text, cfg.out)
    return EXIT_OK


def _pairs(model, xs, spec) -> list:
    if spec == "auto":
        distinct = sorted(set(xs), key=lambda v: (theta1_value(model, v), v))
        pairs = []
        for i, a in enumerate(distinct):
            for b in distinct[i + 1 :]:
                if theta1_value(model, a) < theta1_value(model, b):
                    pairs.append((a, b))
        return pairs
    out = []
    for i, j in spec:
        if not (0 <= i < len(xs) and 0 <= j < len(xs)):
            raise CliError("CONFIG_INVALID", f"pair {i}:{j} out of range for {len(xs)} observations")
        out.append((xs[i], xs[j]))
    return out


def cmd_diagnose(cfg: RunConfig) -> int:
    model = make_model(cfg.model, cfg.params)
    sample = _sample(cfg)
    xs = [x for x, _ in sample.active()]
    opts = _solve_options(cfg)
    # explicit pairs index the data as given, zero weights included
    pairs = _pairs(model, xs if cfg.pairs == "auto" else list(sample.observations), cfg.pairs)

    def comparison(pair):
        return dg.check_comparison_monotone(model, pair[0], pair[1], cfg.grid_size, strict=False)

    def family(pair):
        return dg.check_weighted_estimator_family(model, dg.comparison_samples(model, pair[0], pair[1], 9, cfg.grid_size), opts=opts)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        comparisons = list(pool.map(comparison, pairs))
        families = list(pool.map(family, pairs))

    report = dg.DiagnosticReport()
    if pairs:
        for entry in comparisons:
            report.add(entry)
    else:
        report.add(dg.CheckResult("comparison_monotone", dg.VACUOUS, tolerance_used=dg.STRICT_TOL))
    singles = [WeightedSample.uniform((x,)) for x in dict.fromkeys(xs)]
    for entry in dg.check_weighted_estimator_family(model, [sample] + singles, opts=opts).checks:
        report.add(entry)
    for sub in families:
        report.add(sub)
    report.add(dg.check_z_property(model, sample, opts))
    report.add(_product_checks(model, xs, cfg))

    _emit(dump_json(report.to_dict()), cfg.out)
    return EXIT_OK if report.ok else EXIT_DIAGNOSTIC


def _product_checks(model, xs, cfg: RunConfig) -> dg.DiagnosticReport:
    """Build the envelope weight of the data and test every product on its grid."""
    report = dg.DiagnosticReport()
    xs = [x for x in xs if theta1_value(model, x) in model.theta]
    thetas = sorted({theta1_value(model, x) for x in xs})
    if len(thetas) < 2:
        report.add(dg.CheckResult("decreasing_product", dg.VACUOUS))
        return report
    grid = working_grid(model, xs, points=256)
    try:
        env = q_star_envelope(model, EnvelopeConfig(tuple(xs), grid, require_richness=False))
        one_sided_fill(grid, env.q_lower, env.q_upper)
        weight = build_monotone_weight(lower_envelope(model, xs, require_richness=False, fill_one_sided=True), grid)
    except NumericalError as err:
        witness = {"t": getattr(err, "t", None), "error": err.code, "message": str(err)}
        report.add(dg.CheckResult("decreasing_product", dg.FAIL, witness))
        return report
    for x in dict.fromkeys(xs):
        report.add(dg.check_decreasing_product(model, weight, x, grid, rel_tol=1e-6))
    return report


# ----------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with default settings")
    common.add_argument("--model", help="model name: normal_variance, location, oscillating")
    common.add_argument("--param", action="append", metavar="K=V", help="model parameter (repeatable)")
    common.add_argument("--data", help="CSV with header; column x, optional weight column")
    common.add_argument("--obs", help="inline observations, comma separated (instead of --data)")
    common.add_argument("--weights-col", help="weight column name (default w)")
    common.add_argument("--weights", help="inline weights, comma separated")
    common.add_argument("--tol", type=float, help="solver bracket tolerance")
    common.add_argument("--out", help="write the JSON report here instead of stdout")
    common.add_argument("--workers", type=int, help="threads for independent checks")

    parser = argparse.ArgumentParser(prog="psirep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("estimate", parents=[common], help="weighted estimator of a sample")
    rep = sub.add_parser("representation", parents=[common], help="envelope, weight and convexified losses")
    rep.add_argument("--family", help="family observations: CSV path or comma-separated values")
    rep.add_argument("--grid", help="working grid lo,hi,points")
    rep.add_argument("--tau", type=float, help="anchor with p(tau) = 1")
    rep.add_argument("--out-dir", dest="out_dir", help="directory for the CSV tables and summary.json")
    rich = rep.add_mutually_exclusive_group()
    rich.add_argument("--require-richness", dest="require_richness", action="store_true", default=None,
                      help="fail when a grid point has no family member on one side")
    rich.add_argument("--allow-one-sided", dest="require_richness", action="store_false",
                      help="fill one-sided grid points from the other envelope (default)")
    diag = sub.add_parser("diagnose", parents=[common], help="monotonicity diagnostics")
    diag.add_argument("--pairs", help="'auto' or index pairs i:j,...")
    for p in (sub.choices["estimate"], diag):
        p.set_defaults(family=None, grid=None, tau=None, out_dir=None, require_richness=None)
    for p in (sub.choices["estimate"], rep):
        p.set_defaults(pairs=None)
    return parser


COMMANDS = {"estimate": cmd_estimate, "representation": cmd_representation, "diagnose": cmd_diagnose}


def _fail(code: str, message: str, exit_code: int, **extra) -> int:
    error = {"code": code, "message": message, "exit_code": exit_code}
    error.update({k: v for k, v in extra.items() if v is not None})
    sys.stderr.write(json.dumps({"error": _clean(error)}, allow_nan=False) + "\n")
    return exit_code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except CliError as err:
        return _fail(err.code, str(err), EXIT_CONFIG, **err.extra)
    except ConfigError as err:
        return _fail(err.code, str(err), EXIT_CONFIG)
    except PsiError as err:
        return _fail(err.code, str(err), EXIT_NUMERIC, t=getattr(err, "t", None))


if __name__ == "__main__":
    sys.exit(main())
