"""``qlc`` command line: config JSON in, JSON/CSV reports out.

Exit codes: 0 success, 1 ``verify`` found an empirical violation, 2 invalid
config or input, 3 numerical failure.  Errors are written to stderr as one
JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._optim import ConvergenceError
from .chaining import constant_field, local_entropy
from .concentration import RefinementError
from .efc import family_from_token
from .glm import GlmModel, fit_qmle
from .io import BOUND_COLUMNS, bound_rows, read_numeric_csv, write_csv, write_json
from .montecarlo import (
    SimConfig,
    SimulationError,
    build_scenario,
    scenario_bounds,
    simulate,
    verify,
    widening_divergence_check,
)
from .penalties import DivergenceError, entropy_and_volume, sqrt_psd
from .single_index import SiModel, link_from_token, si_fit

COMMANDS = ("fit", "target", "rate", "bounds", "entropy", "simulate", "verify")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

SIM_KEYS = set(SimConfig.__dataclass_fields__) - {"design"}
EXTRA_KEYS = {"design", "rho", "eps", "hfield", "widening", "description"}
KNOWN_KEYS = SIM_KEYS | EXTRA_KEYS

NUMERIC_ERRORS = (ConvergenceError, SimulationError, DivergenceError, RefinementError,
                  FloatingPointError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Invalid configuration, arguments or input files."""


# --------------------------------------------------------------------------
# config resolution
# --------------------------------------------------------------------------


def _design(spec, data_design=None) -> np.ndarray:
    if data_design is not None:
        return data_design
    if spec is None:
        raise ConfigError("config needs 'design' (or pass --data)")
    if isinstance(spec, list):
        return np.atleast_2d(np.asarray(spec, dtype=float)).reshape(len(spec), -1)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("'design' must be a matrix or an object with 'kind'")
    kind = spec["kind"]
    allowed = {"intercept": {"kind", "n"}, "uniform": {"kind", "n", "p", "low", "high", "seed", "intercept"}}
    if kind not in allowed:
        raise ConfigError(f"unknown design kind {kind!r}; use one of {sorted(allowed)}")
    extra = set(spec) - allowed[kind]
    if extra:
        raise ConfigError(f"unknown design keys {sorted(extra)}")
    n = int(spec["n"])
    if n < 1:
        raise ConfigError("design n must be >= 1")
    if kind == "intercept":
        return np.ones((n, 1))
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    x = rng.uniform(float(spec.get("low", -1.0)), float(spec.get("high", 1.0)), size=(n, int(spec["p"])))
    if spec.get("intercept", False):
        x = np.hstack([np.ones((n, 1)), x])
    return x


def resolve_config(raw: dict, args: argparse.Namespace | None = None) -> dict:
    """Config file plus command-line overrides, with unknown keys rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = dict(raw)
    overrides = {"master_seed": "seed", "reps": "reps", "rho": "rho", "eps": "eps"}
    for key, flag in overrides.items():
        value = None if args is None else getattr(args, flag)
        if value is not None:
            cfg[key] = value
    if "rho" in cfg:
        cfg["rho_grid"] = [cfg["rho"]]
    if "eps" in cfg and not float(cfg["eps"]) > 0:
        raise ConfigError("eps must be positive")
    return cfg


def sim_config(cfg: dict, data_design=None) -> SimConfig:
    kw = {k: v for k, v in cfg.items() if k in SIM_KEYS}
    if "box_lower" not in kw or "box_upper" not in kw:
        raise ConfigError("config needs 'box_lower' and 'box_upper'")
    try:
        return SimConfig(design=_design(cfg.get("design"), data_design), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_fit(cfg, args, out: Path):
    if args.data is None:
        raise ConfigError("fit needs --data")
    try:
        header, data = read_numeric_csv(args.data)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if data.shape[1] < 2:
        raise ConfigError("data needs at least one design column followed by the response column")
    x, y = data[:, :-1], data[:, -1]
    scenario = cfg.get("scenario", "glm")
    fam = family_from_token(cfg.get("family", "gaussian:1"))
    mu = float(cfg.get("mu", 1.0))
    p = x.shape[1]
    lo = np.broadcast_to(np.asarray(cfg.get("box_lower", -np.inf), dtype=float), (p,))
    hi = np.broadcast_to(np.asarray(cfg.get("box_upper", np.inf), dtype=float), (p,))
    try:
        fam.check_support(y)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if scenario == "glm":
        res = fit_qmle(GlmModel(x, fam, mu, y, lo, hi))
        result = res.to_dict()
    elif scenario == "single_index":
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ConfigError("single_index fits need a finite box")
        model = SiModel(x, fam, link_from_token(cfg["link"]), mu, y, lo, hi)
        result = si_fit(model).to_dict()
    else:
        raise ConfigError("scenario must be 'glm' or 'single_index'")
    result["columns"] = header
    return {"fit.json": result}


def _unbounded_variant(sc: SimConfig):
    return build_scenario(SimConfig(**{**sc.__dict__, "variant": "none"}))


def cmd_target(cfg, args, out):
    scen = _unbounded_variant(sim_config(cfg))
    return {"target.json": {"theta0": scen.theta0.tolist(), **scen.info}}


def cmd_rate(cfg, args, out):
    sc = sim_config(cfg)
    scen = _unbounded_variant(sc)
    pts = sc.grid().points()
    vals = np.asarray(scen.rate(pts), dtype=float)
    cols = [f"theta_{j}" for j in range(sc.p)] + ["rate"]
    rows = [dict(zip(cols, [*map(float, pt), float(m)])) for pt, m in zip(pts, vals)]
    summary = {"theta0": scen.theta0.tolist(), "min_rate": float(vals.min()),
               "argmin": pts[int(np.argmin(vals))].tolist(), "n_points": len(rows)}
    return {"rate.json": summary, "rate.csv": (rows, cols)}


def cmd_bounds(cfg, args, out):
    sc = sim_config(cfg)
    if sc.variant == "none":
        raise ConfigError("bounds needs variant 'quadratic' or 'ranking'")
    rep = scenario_bounds(sc)
    return {"bounds.json": rep, **_bound_tables(rep["tail"], rep["noncoverage"], sc.rho_grid)}


def cmd_entropy(cfg, args, out):
    sc = sim_config(cfg)
    eps = float(cfg.get("eps", 1.0))
    if "hfield" in cfg:
        h = np.atleast_2d(np.asarray(cfg["hfield"], dtype=float))
    else:
        h = sqrt_psd(_unbounded_variant(sc).vstar)
    grid = sc.grid()
    spec = constant_field(grid, h)
    center = grid.nearest_index(0.5 * (sc.box_lower + sc.box_upper))
    rep = local_entropy(spec, eps, center)
    _, q_p = entropy_and_volume(sc.p)
    rows = [{"level": k + 1, "radius": eps * 2.0 ** -(k + 1), "count": c,
             "term": 2.0 ** -(k + 1) * float(np.log(c))} for k, c in enumerate(rep.counts)]
    return {"entropy.json": {**rep.to_dict(), "euclidean_entropy_number": q_p, "hfield": h.tolist()},
            "entropy.csv": (rows, ["level", "radius", "count", "term"])}


def _bound_tables(tail, noncoverage, rhos) -> dict:
    """One tail and one coverage CSV per rho, named ``tail_rho<rho>.csv`` and ``coverage_rho<rho>.csv``."""
    files = {}
    for rho in rhos:
        files[f"tail_rho{rho!r}.csv"] = (bound_rows([r for r in tail if r["rho"] == rho], "r"), BOUND_COLUMNS)
        files[f"coverage_rho{rho!r}.csv"] = (
            bound_rows([r for r in noncoverage if r["rho"] == rho], "z"), BOUND_COLUMNS)
    return files


def _sim_outputs(res):
    return {"simulate.json": res.to_dict(),
            **_bound_tables(res.tail, res.noncoverage, res.config["rho_grid"])}


def cmd_simulate(cfg, args, out):
    res = simulate(sim_config(cfg), args.workers)
    files = _sim_outputs(res)
    if args.per_rep:
        cols = ["rep", "loglik_diff", "rate", "pen_sup"] + [f"theta_hat_{j}" for j in range(len(res.theta0))]
        rows = [{**r, **{f"theta_hat_{j}": float(v) for j, v in enumerate(r["theta_hat"])}} for r in res.reps]
        files["reps.csv"] = (rows, cols)
    return files


def cmd_verify(cfg, args, out):
    sc = sim_config(cfg)
    res = simulate(sc, args.workers)
    report = verify(res)
    wide = cfg.get("widening")
    if wide is not None:
        check = widening_divergence_check(sc, wide["widths"], float(wide.get("rho", sc.rho_grid[0])), args.workers)
        report["widening"] = check
        report["diverging"] = check["diverging"]
    files = _sim_outputs(res)
    files["verify.json"] = report
    return files


HANDLERS = {
    "fit": cmd_fit,
    "target": cmd_target,
    "rate": cmd_rate,
    "bounds": cmd_bounds,
    "entropy": cmd_entropy,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}

HELP = {
    "fit": "fit the quasi MLE to a data CSV (design columns, then the response column)",
    "target": "compute the target parameter of the true law",
    "rate": "tabulate the rate function on the search grid",
    "bounds": "constants and tail/coverage bound tables",
    "entropy": "local entropy of the constant metric field",
    "simulate": "Monte Carlo replication of a scenario",
    "verify": "simulate and check every bound; exit 1 on a violation, 3 when the widening check diverges",
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="scenario config JSON")
    p.add_argument("--data", type=Path, help="numeric CSV (fit only)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--reps", type=int, help="override reps")
    p.add_argument("--rho", type=float, help="override rho (replaces rho_grid)")
    p.add_argument("--eps", type=float, help="override eps")
    p.add_argument("--threads", type=int, help="worker pool size (env QLC_THREADS; default: CPU count)")
    p.add_argument("--per-rep", action="store_true", help="also write reps.csv (simulate only)")


class _Parser(argparse.ArgumentParser):
    """Argument errors follow the same JSON-on-stderr convention as other config errors."""

    def error(self, message):
        self.exit(EXIT_CONFIG, json.dumps({"error": "config", "type": "ArgumentError", "message": message}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="qlc",
        description="Quasi-likelihood concentration toolkit.",
        epilog="Every command accepts: --config --data --out --seed --reps --rho --eps --threads --per-rep. "
               "Exit codes: 0 ok, 1 verify violation, 2 config error, 3 numerical failure.",
    )
    parser.add_argument("--version", action="version", version=f"qlc {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name in COMMANDS:
        _common(sub.add_parser(name, help=HELP[name], description=HELP[name], formatter_class=parser.formatter_class))
    return parser


def _workers(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("QLC_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"QLC_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _fail(code: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def _write(out: Path, files: dict, header: dict) -> list[str]:
    written = []
    for name, payload in files.items():
        if name.endswith(".json"):
            write_json(out / name, {**header, "result": payload})
        else:
            rows, cols = payload
            write_csv(out / name, rows, cols)
        written.append(str(out / name))
    return written


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help, --version and argument errors
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        args.workers = _workers(args)
        if args.workers < 1:
            raise ConfigError("thread count must be >= 1")
        raw = {}
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        elif args.command != "fit":
            raise ConfigError(f"{args.command} needs --config")
        cfg = resolve_config(raw, args)
        args.out.mkdir(parents=True, exist_ok=True)
        if not os.access(args.out, os.W_OK):
            raise ConfigError(f"output directory {args.out} is not writable")
        files = HANDLERS[args.command](cfg, args, args.out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except NUMERIC_ERRORS as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    header = {"command": args.command, "version": __version__, "config": cfg}
    written = _write(args.out, files, header)
    status = {"command": args.command, "written": written}
    if args.command == "verify":
        report = files["verify.json"]
        status["ok"] = report["ok"]
        sys.stdout.write(json.dumps(status) + "\n")
        if report.get("diverging"):
            return _fail(EXIT_NUMERIC, "numerical", DivergenceError(
                "exp-moment estimate does not settle as the search box widens"))
        return EXIT_OK if status["ok"] else EXIT_VIOLATION
    sys.stdout.write(json.dumps(status) + "\n")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
