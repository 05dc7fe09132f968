"""Command-line interface.

Every subcommand can also be driven from a JSON run file (``tndve run
--config run.json``); flags given on the command line override the file.
All inputs are validated before anything is written, and every output file is
replaced atomically.

Exit codes: 0 success, 1 other package error, 2 configuration, 3 data,
4 numerical failure, 5 file system.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import io as tio
from .demo import CHANNELS, demo_bias
from .errors import ConfigError, DataError, IoError, NumericError, TNDError
from .estimators import (
    X1_RANGE,
    Estimand,
    Method,
    VeEstimate,
    combine_estimates,
    estimate_stratum_ve,
)
from .inference import equality_test
from .montecarlo import run_curve_monte_carlo, run_monte_carlo
from .simulate import Reason, ScenarioConfig, generate_dataset

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4, 5
COMMANDS = ("simulate", "estimate", "mc", "curve", "demo-bias", "test-equality")
ESTIMAND_FLAGS = {"ves": Estimand.VE_S_SEEKER, "ve": Estimand.VE_MARGINAL}
REASON_FLAGS = ("symptoms", "unrelated", "cct")
DEFAULT_GRID_POINTS = 9


def _schema(name):
    text = resources.files("tndve").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _validate(obj, name, source):
    try:
        jsonschema.validate(obj, _schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {exc.message}") from None


def _read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None


def scenario_from_obj(obj, source="scenario") -> ScenarioConfig:
    _validate(obj, "scenario", source)
    return ScenarioConfig(**obj)


def load_scenario(path) -> ScenarioConfig:
    return scenario_from_obj(_read_json(path), str(path))


def grid_points(k: int) -> np.ndarray:
    """``k`` equally spaced interior points of the x1 range."""
    if k < 2:
        raise ConfigError("the curve grid needs at least two points")
    lo, hi = X1_RANGE
    return lo + (hi - lo) * np.arange(1, k + 1) / (k + 1)


def _estimate_json(e: VeEstimate) -> dict:
    return {
        "estimand": e.estimand.value,
        "stratum": e.stratum.token if isinstance(e.stratum, Reason) else str(e.stratum),
        "method": e.method.value,
        "point": e.point, "se": e.se, "ci_low": e.ci_low, "ci_high": e.ci_high, "n_used": e.n_used,
    }


def _dump(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _scenario_json(sc: ScenarioConfig) -> dict:
    d = dataclasses.asdict(sc)
    d["prevalence"] = sc.prevalence.value
    return d


def _format_estimate(e: VeEstimate) -> str:
    return f"{e.estimand.value:<14} VE = {e.point:.4f}  SE = {e.se:.4f}  95% CI [{e.ci_low:.4f}, {e.ci_high:.4f}]  n = {e.n_used}"


# command implementations; each receives a fully resolved parameter dict

def _need(params, *keys):
    missing = [k for k in keys if params.get(k) is None]
    if missing:
        raise ConfigError(f"{params['command']}: missing required option(s) {', '.join('--' + k for k in missing)}")


def _method(params) -> Method:
    return Method(params.get("method") or "parametric")


def _check_x(x):
    if x is not None and not X1_RANGE[0] <= x <= X1_RANGE[1]:
        raise ConfigError(f"--x must lie in [{X1_RANGE[0]}, {X1_RANGE[1]}]")
    return x


def cmd_simulate(params, out):
    _need(params, "scenario", "out")
    sc = params["scenario"]
    seed = sc.base_seed if params.get("seed") is None else params["seed"]
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("--seed must be a 64-bit unsigned integer")
    data = generate_dataset(sc, seed)
    tio.save_dataset_csv(data, params["out"])
    counts = {r.token: int(np.sum((data.reason == int(r)) & (data.tested == 1))) for r in Reason
              if r is not Reason.NOT_TESTED}
    out.write(f"{len(data)} subjects, {int(data.tested.sum())} tested: "
              + ", ".join(f"{k} {v}" for k, v in counts.items()) + "\n")


def cmd_estimate(params, out):
    _need(params, "data", "reason")
    method = _method(params)
    x = _check_x(params.get("x"))
    if method is Method.KERNEL and x is None:
        raise ConfigError("the kernel method needs --x")
    data = tio.load_dataset_csv(params["data"])
    est = estimate_stratum_ve(data, Reason.from_token(params["reason"]), method, x,
                              interaction=x is not None and method is Method.PARAMETRIC)
    out.write(_format_estimate(est) + "\n")
    if params.get("out"):
        tio.write_text_atomic(params["out"], _dump({"x": x, "estimate": _estimate_json(est)}))


def cmd_mc(params, out):
    _need(params, "scenario", "output_dir")
    sc = params["scenario"]
    fmt = params.get("format") or "csv"
    summaries = run_monte_carlo(sc, workers=params.get("workers") or 1, method=_method(params),
                                x=_check_x(params.get("x")))
    rows = tio.results_rows(sc.label, summaries)
    path = Path(params["output_dir"]) / f"results.{fmt}"
    extra = {"scenario": _scenario_json(sc),
             "replicates": {s.estimator: {"n": s.n_replicates, "failed": s.n_failed, "truth": s.truth}
                            for s in summaries}}
    tio.write_results(rows, path, fmt, extra)
    out.write(tio.format_table(rows) + "\n")


def cmd_curve(params, out):
    _need(params, "scenario", "estimand")
    sc = params["scenario"]
    estimand = ESTIMAND_FLAGS[params["estimand"]]
    grid = grid_points(params.get("grid_points") or DEFAULT_GRID_POINTS)
    res = run_curve_monte_carlo(sc, grid, (estimand,), method=_method(params), workers=params.get("workers") or 1)
    curve = res[estimand]
    if params.get("out"):
        tio.emit_plot_data(curve, params["out"])
        out.write(f"{estimand.value}: {len(grid)} grid points, {curve.n_replicates - curve.n_failed} "
                  f"of {curve.n_replicates} replicates -> {params['out']}\n")
    else:
        out.write(tio.plot_data_text(curve.grid, curve.mean_estimate, curve.mean_ci_low, curve.mean_ci_high,
                                     curve.truth))


def cmd_demo_bias(params, out):
    channels = params.get("channels") or "independent"
    if channels not in CHANNELS:
        raise ConfigError(f"--channels must be one of {CHANNELS}")
    res = demo_bias(channels=channels)
    payload = {
        "channels": channels, "true_ve": res.true_ve, "pooled_ve": res.pooled_ve,
        "adjusted_ve": res.adjusted_ve,
        "stratum_ve": {str(k): v for k, v in sorted(res.stratum_ve.items())},
    }
    if params.get("out"):
        tio.write_text_atomic(params["out"], _dump(payload))
    strata = ", ".join(f"x={k}: {'n/a' if v is None else f'{v:.4f}'}" for k, v in sorted(res.stratum_ve.items()))
    out.write(f"true VE {res.true_ve:.4f}, pooled VE {res.pooled_ve:.4f}, "
              f"x-adjusted VE {res.adjusted_ve:.4f} ({strata})\n")


def cmd_test_equality(params, out):
    _need(params, "data")
    x = _check_x(params.get("x"))
    data = tio.load_dataset_csv(params["data"])
    interaction = x is not None
    ves = estimate_stratum_ve(data, Reason.SYMPTOMS, Method.PARAMETRIC, x, interaction=interaction)
    parts = [estimate_stratum_ve(data, r, Method.PARAMETRIC, x, interaction=interaction)
             for r in (Reason.UNRELATED, Reason.CCT)]
    ve = combine_estimates(parts)
    res = equality_test(ves, ve)
    out.write(_format_estimate(ves) + "\n" + _format_estimate(ve) + "\n")
    out.write(f"z = {res.statistic:.4f}, p = {res.p_value:.4g}, "
              f"{'reject' if res.reject else 'do not reject'} equality at alpha = {res.alpha}\n")
    if params.get("out"):
        tio.write_text_atomic(params["out"], _dump({
            "x": x, "estimates": [_estimate_json(ves), _estimate_json(ve)],
            "statistic": res.statistic, "p_value": res.p_value, "reject": res.reject,
        }))


HANDLERS = {
    "simulate": cmd_simulate, "estimate": cmd_estimate, "mc": cmd_mc, "curve": cmd_curve,
    "demo-bias": cmd_demo_bias, "test-equality": cmd_test_equality,
}


# argument parsing

_OVERRIDES = ("seed", "out", "output_dir", "format", "method", "workers", "grid_points", "estimand",
              "data", "reason", "x", "channels")


def _add(p, *names):
    opts = {
        "scenario": dict(metavar="FILE", help="scenario JSON file"),
        "seed": dict(type=int, help="64-bit dataset seed (default: the scenario's base_seed)"),
        "out": dict(metavar="PATH", help="output file"),
        "output_dir": dict(metavar="DIR", help="directory for results files"),
        "format": dict(choices=("csv", "json"), help="results format (default csv)"),
        "method": dict(choices=("parametric", "kernel"), help="estimation method (default parametric)"),
        "workers": dict(type=int, help="worker processes for replicates (default 1)"),
        "grid_points": dict(type=int, metavar="K", help="number of interior x1 grid points"),
        "estimand": dict(choices=tuple(ESTIMAND_FLAGS), help="ves: VE among healthcare seekers; ve: population VE"),
        "data": dict(metavar="CSV", help="dataset CSV"),
        "reason": dict(choices=REASON_FLAGS, help="reason stratum"),
        "x": dict(type=float, help="age point x1 in [0.5, 1]"),
        "channels": dict(choices=CHANNELS, help="how testing channels combine"),
    }
    flags = {"output_dir": "--out", "grid_points": "--grid"}
    for name in names:
        flag = flags.get(name, "--" + name.replace("_", "-"))
        p.add_argument(flag, dest=name, default=None, **opts[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tndve", description="Test-negative design VE simulation and estimation.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add(sub.add_parser("simulate", help="simulate one dataset to CSV"), "scenario", "seed", "out")
    _add(sub.add_parser("estimate", help="VE from one reason stratum of a dataset"),
         "data", "reason", "method", "x", "out")
    _add(sub.add_parser("mc", help="Monte Carlo table of the four estimators"),
         "scenario", "output_dir", "workers", "method", "format", "x")
    _add(sub.add_parser("curve", help="Monte Carlo VE curve as plot data"),
         "scenario", "estimand", "grid_points", "method", "workers", "out")
    _add(sub.add_parser("demo-bias", help="exact collider-bias example"), "channels", "out")
    _add(sub.add_parser("test-equality", help="test VE among seekers against population VE"), "data", "x", "out")
    run = sub.add_parser("run", help="run a command described by a JSON file; flags override the file")
    run.add_argument("--config", required=True, metavar="FILE")
    run.add_argument("--scenario", default=None, metavar="FILE")
    for name in _OVERRIDES:
        flag = "--" + name.replace("_", "-")
        kw = {"type": int} if name in ("seed", "workers", "grid_points") else {"type": float} if name == "x" else {}
        run.add_argument(flag, dest=name, default=None, **kw)
    return parser


def resolve_params(args) -> dict:
    """Merge run file and flags into one parameter dict with a parsed scenario."""
    params = {}
    base = Path(".")
    if args.command == "run":
        cfg = _read_json(args.config)
        _validate(cfg, "run", args.config)
        params.update(cfg)
        base = Path(args.config).parent
        if isinstance(params.get("scenario"), str):
            params["scenario"] = str(base / params["scenario"])
    else:
        params["command"] = args.command
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        params[key] = value
    if params["command"] == "mc" and params.get("output_dir") is None and params.get("out"):
        params["output_dir"] = params.pop("out")
    if params.get("workers") is not None and params["workers"] < 1:
        raise ConfigError("--workers must be at least 1")
    if params.get("grid_points") is not None and params["grid_points"] < 2:
        raise ConfigError("--grid must be at least 2")
    for key, choices in (("estimand", tuple(ESTIMAND_FLAGS)), ("reason", REASON_FLAGS),
                         ("format", ("csv", "json")), ("method", ("parametric", "kernel")), ("channels", CHANNELS)):
        if params.get(key) is not None and params[key] not in choices:
            raise ConfigError(f"{key} must be one of {choices}, got {params[key]!r}")
    sc = params.get("scenario")
    if isinstance(sc, dict):
        params["scenario"] = scenario_from_obj(sc, "scenario")
    elif isinstance(sc, str):
        params["scenario"] = load_scenario(sc)
    return params


def exit_code(exc: BaseException) -> int:
    for cls, code in ((ConfigError, EXIT_CONFIG), (DataError, EXIT_DATA), (NumericError, EXIT_NUMERIC),
                      (IoError, EXIT_IO)):
        if isinstance(exc, cls):
            return code
    return EXIT_OTHER


def main(argv: Optional[list] = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        params = resolve_params(args)
        HANDLERS[params["command"]](params, out)
    except TNDError as exc:
        print(f"tndve: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
