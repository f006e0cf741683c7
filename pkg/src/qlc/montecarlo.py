"""Seeded Monte Carlo checks of the concentration and confidence bounds.

Each replication draws responses from the true law, re-fits the estimator
with the target injected as a start point, and records

* ``L(theta_hat, theta0)``, which is never negative by construction,
* ``M(theta_hat, theta0)``,
* the penalized supremum ``S = sup {L(theta, theta0) + M(theta, theta0) - pen(theta)}``
  over the search grid together with ``theta_hat`` and ``theta0``.

Replication ``k`` uses its own counter-based Philox stream keyed by
``(master_seed, k)``; results are merged by index, so neither the worker count
nor the scheduling order can change a single bit of the output.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._optim import ConvergenceError
from .concentration import b_curve, clamp_probability, coverage_bound, quadratic_minorant, tail_bound
from .efc import DomainError, EfcLaw, GaussianNoiseLaw, family_from_token
from .glm import (
    GlmModel,
    fit_qmle,
    glm_geometry,
    identifiability_constants,
    loglik_diff,
    rate_function,
    target_theta0,
)
from .grids import GridDomain
from .penalties import PenaltySpec, bound_Q_quadratic, bound_Q_ranking, check_rho_eps, penalty, pstar
from .single_index import SiModel, link_from_token, si_fit, si_loglik, si_rate_function, si_target_theta0

__all__ = [
    "SimConfig",
    "SimResult",
    "SimulationError",
    "rep_rng",
    "simulate",
    "empirical_exp_moment",
    "log_mean_exp",
    "tail_experiment",
    "coverage_experiment",
    "widening_divergence_check",
    "scenario_bounds",
    "build_scenario",
    "Scenario",
    "verify",
    "to_json",
]

FAILURE_RATE_LIMIT = 0.01
REFINE_RTOL = 0.01
MAX_REFINEMENTS = 3
SUP_CHUNK = 1024
STDERR_MULT = 3.0
VARIANTS = ("quadratic", "ranking", "none")


class SimulationError(RuntimeError):
    """The simulation could not produce a trustworthy result."""


def rep_rng(master_seed: int, rep: int) -> np.random.Generator:
    """Independent counter-based stream for replication ``rep``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(rep,))))


def _sorted(name, values):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size and np.any(np.diff(arr) <= 0):
        raise ValueError(f"{name} must be sorted ascending without repeats")
    return arr


@dataclass
class SimConfig:
    """Scenario description.

    Truth is either well specified (``theta_star``) or given by ``true_means``
    with ``noise`` in {"efc", "gaussian"}; ``noise_sigma = 0`` with Gaussian
    noise gives responses equal to the means.
    """

    design: np.ndarray
    box_lower: np.ndarray
    box_upper: np.ndarray
    scenario: str = "glm"
    family: str = "gaussian:1"
    link: str | None = None
    mu: float = 1.0
    theta_star: np.ndarray | None = None
    true_means: np.ndarray | None = None
    noise: str = "efc"
    noise_sigma: float = 1.0
    grid_points: int = 401
    reps: int = 1000
    master_seed: int = 0
    rho_grid: list[float] = field(default_factory=lambda: [0.5])
    r_grid: list[float] = field(default_factory=list)
    z_grid: list[float] = field(default_factory=list)
    variant: str = "quadratic"
    a1: float | None = None
    penalty: dict = field(default_factory=dict)
    lambda1_star: float = 1.0
    lambda_star: float = math.inf
    max_budget: int = 5_000_000_000
    refine: bool = True

    def __post_init__(self):
        x = np.asarray(self.design, dtype=float)
        self.design = x[:, None] if x.ndim == 1 else x
        p = self.design.shape[1]
        self.box_lower = np.broadcast_to(np.asarray(self.box_lower, dtype=float), (p,)).copy()
        self.box_upper = np.broadcast_to(np.asarray(self.box_upper, dtype=float), (p,)).copy()
        if self.scenario not in ("glm", "single_index"):
            raise ValueError("scenario must be 'glm' or 'single_index'")
        if self.scenario == "single_index" and not self.link:
            raise ValueError("single_index scenario needs a link")
        if (self.theta_star is None) == (self.true_means is None):
            raise ValueError("give exactly one of theta_star and true_means")
        if self.theta_star is not None:
            self.theta_star = np.asarray(self.theta_star, dtype=float).reshape(p)
        if self.true_means is not None:
            self.true_means = np.asarray(self.true_means, dtype=float).reshape(-1)
            if self.true_means.size != self.design.shape[0]:
                raise ValueError("true_means length differs from the number of rows")
        if self.noise not in ("efc", "gaussian"):
            raise ValueError("noise must be 'efc' or 'gaussian'")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.rho_grid = _sorted("rho_grid", self.rho_grid).tolist()
        self.r_grid = _sorted("r_grid", self.r_grid).tolist()
        self.z_grid = _sorted("z_grid", self.z_grid).tolist()
        if any(not 0 < r < 1 for r in self.rho_grid) and self.variant != "none":
            raise ValueError("rho values must lie in (0, 1)")
        if any(r <= 0 for r in self.rho_grid):
            raise ValueError("rho values must be positive")
        if self.variant == "ranking" and len(self.rho_grid) != 1:
            raise ValueError("the ranking variant fixes a single rho inside its penalty")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.reps * self.design.shape[0] * self.grid_points**p > self.max_budget:
            raise ValueError(f"reps x rows x grid size exceeds budget {self.max_budget}")

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def grid(self) -> GridDomain:
        return GridDomain(tuple(self.box_lower), tuple(self.box_upper), (self.grid_points,) * self.p)

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


# --------------------------------------------------------------------------
# scenario assembly
# --------------------------------------------------------------------------


@dataclass
class Scenario:
    config: SimConfig
    law: object
    theta0: np.ndarray
    loglik_diff: object
    rate: object
    fit: object
    eta: object
    pen: object
    vstar: np.ndarray
    bounds: dict
    info: dict


def _true_law(cfg, fam, natural_star):
    if cfg.true_means is None:
        if cfg.noise == "gaussian":
            return GaussianNoiseLaw(fam.mean(natural_star), cfg.noise_sigma)
        return EfcLaw(fam, natural_star)
    if cfg.noise == "gaussian":
        return GaussianNoiseLaw(cfg.true_means, cfg.noise_sigma)
    return EfcLaw.from_means(fam, cfg.true_means)


def build_scenario(cfg: SimConfig) -> Scenario:
    """Truth, target, likelihood callables, penalty and bound constants of ``cfg``."""
    fam = family_from_token(cfg.family)
    info: dict = {}
    if cfg.scenario == "glm":
        model = GlmModel(cfg.design, fam, cfg.mu, None, cfg.box_lower, cfg.box_upper)
        natural = None if cfg.theta_star is None else cfg.design @ cfg.theta_star
        law = _true_law(cfg, fam, natural)
        target = target_theta0(cfg.design, fam, law.means, cfg.mu)
        theta0 = target.theta0
        info["target"] = target.to_dict()

        def ldiff(y, th):
            return loglik_diff(model.with_responses(y), th, theta0)

        def rate(th):
            return rate_function(model, th, theta0, law)

        def fit(y):
            res = fit_qmle(model.with_responses(y), init=theta0)
            return res.theta

        def eta(th):
            return np.asarray(th, dtype=float) @ cfg.design.T

        geom = glm_geometry(model, cfg.lambda1_star, law)
        vstar = geom.V
        info["geometry"] = geom.to_dict()
    else:
        link = link_from_token(cfg.link)
        if cfg.theta_star is not None:
            true_f = fam.check_domain(link.g(cfg.design @ cfg.theta_star))
        else:
            true_f = EfcLaw.from_means(fam, cfg.true_means).natural
        model = SiModel(cfg.design, fam, link, cfg.mu, None, cfg.box_lower, cfg.box_upper, true_f)
        law = _true_law(cfg, fam, true_f)
        starts = None if cfg.theta_star is None else cfg.theta_star
        tgt = si_target_theta0(model, extra_starts=starts)
        theta0 = tgt.theta
        info["target"] = {"theta0": theta0.tolist(), "multimodal": tgt.multimodal,
                          "grad_norm": tgt.grad_norm, "local_maxima": tgt.local_maxima}

        def ldiff(y, th):
            m = model.replace(responses=y)
            return si_loglik(m, th) - si_loglik(m, theta0)

        def rate(th):
            return si_rate_function(model, th, theta0, law)

        def fit(y):
            return si_fit(model.replace(responses=y), extra_starts=theta0).theta

        def eta(th):
            return link.g(np.asarray(th, dtype=float) @ cfg.design.T)

        # V* dominates V(theta) on the grid: largest squared link slope per row
        pts = cfg.grid().points()
        slope_sq = (link.g_dot(pts @ cfg.design.T) ** 2).max(axis=0)
        scales = law.scales(cfg.lambda1_star)
        vstar = cfg.mu**2 * (cfg.design.T * (scales**2 * slope_sq)) @ cfg.design
        info["vstar"] = vstar.tolist()

    grid = cfg.grid()
    pen, bounds = _penalty_and_bounds(cfg, model, law, theta0, rate, vstar, grid, info)
    return Scenario(cfg, law, theta0, ldiff, rate, fit, eta, pen, vstar, bounds, info)


def _quadratic_pen(a1, vstar, theta0):
    def pen(th):
        diff = np.atleast_2d(np.asarray(th, dtype=float)) - theta0
        return a1 * a1 * np.einsum("mi,ij,mj->m", diff, vstar, diff)
    return pen


def _penalty_and_bounds(cfg, model, law, theta0, rate, vstar, grid, info):
    p = cfg.p
    rhos = cfg.rho_grid
    bounds = {"variant": cfg.variant, "per_rho": {}}
    if cfg.variant == "none":
        return (lambda th: np.zeros(np.atleast_2d(th).shape[0])), bounds
    pts = grid.points()
    rate_vals = np.asarray(rate(pts), dtype=float)
    if cfg.variant == "quadratic":
        mino = quadratic_minorant(rate, vstar, grid, theta0)
        if mino.negative_rate or mino.a_sq <= 0:
            raise SimulationError("rate function is not positive on the grid; quadratic variant inapplicable")
        a = mino.a
        if cfg.a1 is not None:
            a1 = float(cfg.a1)
        elif cfg.scenario == "glm":
            geom = glm_geometry(model, cfg.lambda1_star, law)
            ident = identifiability_constants(model, geom, theta0, pts[:: max(1, len(pts) // 50)], law)
            info["identifiability"] = ident.to_dict()
            a1 = min(ident.a1, a)
        else:
            a1 = 0.5 * a
        if not 0 < a1 <= a:
            raise SimulationError(f"need 0 < a1 <= a (a1={a1}, a={a})")
        s = 1 - a1 * a1 / (a * a)
        pen = _quadratic_pen(a1, vstar, theta0)
        b0 = float(b_curve([0.0], rate_vals, pen(pts))[0])
        bounds.update({"a": a, "a1": a1, "s": s, "a_argmin": mino.argmin, "b_zero": b0})
        for rho in rhos:
            eps = math.sqrt((1 - rho) / rho)
            kap_spec = PenaltySpec("quadratic", np.eye(p), rho=rho, eps=eps, delta1=(1 - rho) * a1 * a1)
            ps = pstar(kap_spec)
            ok, margin = check_rho_eps(rho, eps, cfg.lambda_star)
            bounds["per_rho"][repr(rho)] = {
                "log_Q_s": bound_Q_quadratic(rho, s, a, a1, p),
                "log_Q_0": bound_Q_quadratic(rho, 0.0, a, a, p),
                "log_Q_ranking": bound_Q_ranking(rho, eps, p, ps),
                "Pstar": ps,
                "eps": eps,
                "rho_eps_ok": ok,
                "rho_eps_margin": margin,
            }
        return pen, bounds
    # ranking variant with an explicit penalty family
    spec_kw = dict(cfg.penalty)
    rho = rhos[0]
    spec = PenaltySpec(vstar=vstar, theta0=theta0, rho=rho, **spec_kw)
    ps = pstar(spec)
    log_q = bound_Q_ranking(rho, spec.eps, p, ps)
    pen_vals = penalty(spec, pts)
    b = b_curve(cfg.r_grid, rate_vals, pen_vals)
    b0 = float(b_curve([0.0], rate_vals, pen_vals)[0])
    ok, margin = check_rho_eps(rho, spec.eps, cfg.lambda_star)
    bounds.update({"penalty": spec.to_dict(), "b_zero": b0})
    bounds["per_rho"][repr(rho)] = {"log_Q_ranking": log_q, "Pstar": ps, "b_of_r": b.tolist(),
                                    "eps": spec.eps, "rho_eps_ok": ok, "rho_eps_margin": margin}
    return (lambda th: penalty(spec, np.atleast_2d(th))), bounds


# --------------------------------------------------------------------------
# replication and aggregation
# --------------------------------------------------------------------------


def _one_rep(sc: Scenario, rep: int):
    rng = rep_rng(sc.config.master_seed, rep)
    y = np.asarray(sc.law.sample(rng), dtype=float)
    try:
        theta = sc.fit(y)
        ld = float(sc.loglik_diff(y, theta))
        if ld < 0:
            # theta0 is a candidate too; keep the larger of the two
            theta, ld = sc.theta0.copy(), 0.0
        rate = float(sc.rate(theta))
    except (ConvergenceError, DomainError, FloatingPointError) as exc:
        return {"rep": rep, "failed": True, "error": f"{type(exc).__name__}: {exc}", "y": y}
    at_hat = ld + rate - float(sc.pen(theta)[0])
    return {"rep": rep, "failed": False, "theta_hat": theta, "loglik_diff": ld, "rate": rate,
            "at_hat": at_hat, "y": y}


def _grid_sups(sc: Scenario, grid: GridDomain, ys: np.ndarray) -> np.ndarray:
    """Grid maximum of the penalized field for each row of ``ys``."""
    fam, mu = family_from_token(sc.config.family), sc.config.mu
    pts = grid.points()
    eta_g = sc.eta(pts)
    eta0 = sc.eta(sc.theta0)
    shift = eta_g - eta0
    dsum = np.sum(fam.d(eta_g) - fam.d(eta0), axis=1)
    base = np.asarray(sc.rate(pts), dtype=float) - np.asarray(sc.pen(pts), dtype=float) - mu * dsum
    out = np.empty(ys.shape[0])
    for start in range(0, ys.shape[0], SUP_CHUNK):
        block = ys[start:start + SUP_CHUNK]
        out[start:start + SUP_CHUNK] = np.max(mu * (shift @ block.T) + base[:, None], axis=0)
    return out


def log_mean_exp(x) -> float:
    x = np.asarray(x, dtype=float)
    top = x.max()
    return float(top + np.log(np.mean(np.exp(x - top))))


def _exp_moment(sups, rho):
    """Mean of ``exp(rho S)`` and its jackknife standard error, overflow-safe."""
    x = rho * np.asarray(sups, dtype=float)
    n = x.size
    top = x.max()
    scaled = np.exp(x - top)
    total = scaled.sum()
    log_est = float(top + np.log(total / n))
    if n < 2:
        return math.exp(log_est) if log_est < 700 else math.inf, math.nan, log_est
    loo = (total - scaled) / (n - 1)
    se_scaled = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    log_se = top + math.log(se_scaled) if se_scaled > 0 else -math.inf
    est = math.exp(log_est) if log_est < 700 else math.inf
    se = math.exp(log_se) if log_se < 700 else math.inf
    return est, se, log_est


def _binomial(hits, n):
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


@dataclass
class SimResult:
    config: dict
    version: str
    theta0: list
    info: dict
    bounds: dict
    reps: list[dict]
    n_failed: int
    failures: list[dict]
    grid_levels: list[dict]
    tail: list[dict]
    noncoverage: list[dict]
    exp_moment: list[dict]

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return to_json(self.to_dict())

    @property
    def sups(self) -> np.ndarray:
        return np.array([r["pen_sup"] for r in self.reps])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def to_json(obj, indent: int | None = 1) -> str:
    """Canonical JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_clean(obj), sort_keys=True, indent=indent, allow_nan=False)


def simulate(config: SimConfig, workers: int = 1) -> SimResult:
    """Run every replication of ``config`` and aggregate tails, coverage and moments."""
    sc = build_scenario(config)
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        records = list(pool.map(lambda k: _one_rep(sc, k), range(config.reps)))
    records.sort(key=lambda r: r["rep"])
    good = [r for r in records if not r["failed"]]
    failed = [{"rep": r["rep"], "error": r["error"]} for r in records if r["failed"]]
    if len(failed) > FAILURE_RATE_LIMIT * config.reps:
        raise SimulationError(f"{len(failed)} of {config.reps} replications failed: {failed[:3]}")
    if not good:
        raise SimulationError("no successful replication")
    ys = np.stack([r["y"] for r in good])
    at_hat = np.array([r["at_hat"] for r in good])
    at_theta0 = -float(sc.pen(sc.theta0)[0])

    # penalized sup with the refinement-doubling acceptance rule
    grid = config.grid()
    levels = []
    sups = np.maximum(np.maximum(_grid_sups(sc, grid, ys), at_hat), at_theta0)
    rhos = config.rho_grid
    moments = [_exp_moment(sups, rho)[2] for rho in rhos]
    levels.append({"grid": grid.to_dict(), "log_exp_moment": moments})
    stable = not config.refine
    for _ in range(MAX_REFINEMENTS if config.refine else 0):
        grid = grid.refined()
        new = np.maximum(np.maximum(_grid_sups(sc, grid, ys), at_hat), at_theta0)
        new_moments = [_exp_moment(new, rho)[2] for rho in rhos]
        levels.append({"grid": grid.to_dict(), "log_exp_moment": new_moments})
        change = max(abs(math.expm1(b - a)) for a, b in zip(moments, new_moments))
        sups, moments = new, new_moments
        if change < REFINE_RTOL:
            stable = True
            break
    levels[-1]["accepted"] = stable

    n = len(good)
    rates = np.array([r["rate"] for r in good])
    lds = np.array([r["loglik_diff"] for r in good])
    rep_rows = [{"rep": r["rep"], "theta_hat": r["theta_hat"], "loglik_diff": r["loglik_diff"],
                 "rate": r["rate"], "pen_sup": float(s)} for r, s in zip(good, sups)]

    tail, cover, moments_out = [], [], []
    for rho in rhos:
        key = repr(rho)
        br = sc.bounds.get("per_rho", {}).get(key, {})
        for r in config.r_grid:
            emp, se = _binomial(int(np.sum(rates > r)), n)
            row = {"rho": rho, "r": r, "empirical": emp, "stderr": se, "n_reps": n}
            row.update(_tail_bound_row(sc.bounds, br, rho, r, config.r_grid))
            tail.append(row)
        for z in config.z_grid:
            emp, se = _binomial(int(np.sum(lds > z)), n)
            row = {"rho": rho, "z": z, "empirical": emp, "stderr": se, "n_reps": n}
            row.update(_coverage_bound_row(sc.bounds, br, rho, z))
            cover.append(row)
        est, se, log_est = _exp_moment(sups, rho)
        row = {"rho": rho, "estimate": est, "stderr": se, "log_estimate": log_est, "n_reps": n}
        if br:
            log_q = br["log_Q_ranking"]
            row.update({"log_bound": log_q, "bound": math.exp(log_q)})
        moments_out.append(row)

    return SimResult(
        config=config.to_dict(), version=__version__, theta0=sc.theta0.tolist(), info=sc.info,
        bounds=sc.bounds, reps=rep_rows, n_failed=len(failed), failures=failed,
        grid_levels=levels, tail=tail, noncoverage=cover, exp_moment=moments_out,
    )


def _tail_bound_row(bounds, br, rho, r, r_grid):
    if not br:
        return {}
    if bounds["variant"] == "quadratic":
        raw = tail_bound(r, rho * bounds["s"], br["log_Q_s"])
    else:
        b_r = br["b_of_r"][list(r_grid).index(r)]
        raw = tail_bound(r, rho, br["log_Q_ranking"], b_r)
    return {"bound_raw": raw, "bound": float(clamp_probability(raw))}


def _coverage_bound_row(bounds, br, rho, z):
    if not br:
        return {}
    if bounds["variant"] == "quadratic":
        raw = coverage_bound(z, rho, br["log_Q_0"])
    else:
        raw = coverage_bound(z, rho, br["log_Q_ranking"], bounds["b_zero"])
    return {"bound_raw": raw, "bound": float(clamp_probability(raw))}


def scenario_bounds(config: SimConfig) -> dict:
    """Target, constants and bound tables of a scenario without any simulation."""
    sc = build_scenario(config)
    tail, cover, moments = [], [], []
    for rho in config.rho_grid:
        br = sc.bounds.get("per_rho", {}).get(repr(rho), {})
        for r in config.r_grid:
            tail.append({"rho": rho, "r": r, **_tail_bound_row(sc.bounds, br, rho, r, config.r_grid)})
        for z in config.z_grid:
            cover.append({"rho": rho, "z": z, **_coverage_bound_row(sc.bounds, br, rho, z)})
        if br:
            moments.append({"rho": rho, "log_bound": br["log_Q_ranking"], "bound": math.exp(br["log_Q_ranking"])})
    return {"theta0": sc.theta0.tolist(), "info": sc.info, "bounds": sc.bounds,
            "tail": tail, "noncoverage": cover, "exp_moment": moments}


# --------------------------------------------------------------------------
# experiments built on a result
# --------------------------------------------------------------------------


def empirical_exp_moment(source: SimConfig | SimResult, rho: float, workers: int = 1) -> dict:
    """``E exp{rho S}`` estimate with jackknife standard error."""
    res = simulate(source, workers) if isinstance(source, SimConfig) else source
    est, se, log_est = _exp_moment(res.sups, rho)
    return {"rho": rho, "estimate": est, "stderr": se, "log_estimate": log_est, "n_reps": len(res.reps)}


def _dominance(rows):
    out = []
    for row in rows:
        if "bound_raw" not in row:
            continue
        ok = row["empirical"] <= row["bound_raw"] + STDERR_MULT * row["stderr"]
        out.append({**row, "ok": bool(ok), "margin": row["bound_raw"] - row["empirical"]})
    return out


def tail_experiment(result: SimResult) -> list[dict]:
    """Empirical ``P(M(theta_hat, theta0) > r)`` against the concentration bound."""
    return _dominance(result.tail)


def coverage_experiment(result: SimResult) -> list[dict]:
    """Empirical ``P(L(theta_hat, theta0) > z)`` against the confidence bound."""
    return _dominance(result.noncoverage)


def verify(result: SimResult) -> dict:
    """All inequality checks of a result; ``ok`` is False on any violation."""
    checks = []
    for row in tail_experiment(result):
        checks.append({"kind": "tail", **row})
    for row in coverage_experiment(result):
        checks.append({"kind": "coverage", **row})
    for row in result.exp_moment:
        if "bound" in row:
            ok = row["estimate"] <= row["bound"] + STDERR_MULT * row["stderr"]
            checks.append({"kind": "exp_moment", **row, "ok": bool(ok)})
    lds = [r["loglik_diff"] for r in result.reps]
    checks.append({"kind": "argmax_dominance", "min_loglik_diff": min(lds), "ok": bool(min(lds) >= 0)})
    accepted = bool(result.grid_levels[-1].get("accepted", False))
    checks.append({"kind": "grid_refinement", "ok": accepted})
    return {"ok": all(c["ok"] for c in checks), "n_checks": len(checks),
            "n_failed": sum(not c["ok"] for c in checks), "checks": checks}


def widening_divergence_check(config: SimConfig, widths, rho: float, workers: int = 1,
                              rel_tol: float = 0.01, rel_se_tol: float = 0.05) -> dict:
    """Track the exp-moment estimate while the search box widens around its center.

    Each width ``W`` reruns ``config`` on the box ``center +- W`` with the
    original grid spacing, so every width sees the same draws and the
    increments can be paired.  Non-convergence is flagged when some widening
    raises the estimate by more than ``rel_tol`` relative and more than three
    paired standard errors, or when the widest estimate has a relative
    jackknife error above ``rel_se_tol`` (a heavy right tail that no finite
    sample resolves).
    """
    widths = _sorted("widths", widths)
    if widths.size < 2 or widths[0] <= 0:
        raise ValueError("need at least two positive widths")
    center = 0.5 * (config.box_lower + config.box_upper)
    spacing = (config.box_upper - config.box_lower).max() / (config.grid_points - 1)
    rows, runs = [], []
    for w in widths:
        cfg = SimConfig(**{**config.__dict__, "box_lower": center - w, "box_upper": center + w,
                           "grid_points": int(round(2 * w / spacing)) + 1, "rho_grid": [rho],
                           "r_grid": [], "z_grid": [], "refine": False})
        res = simulate(cfg, workers)
        by_rep = {r["rep"]: r["pen_sup"] for r in res.reps}
        runs.append(by_rep)
        est, se, log_est = _exp_moment(np.array(list(by_rep.values())), rho)
        rows.append({"width": float(w), "estimate": est, "stderr": se, "log_estimate": log_est,
                     "relative_stderr": se / est if est > 0 else math.inf})
    flagged = False
    for i in range(1, len(widths)):
        common = sorted(set(runs[i]) & set(runs[i - 1]))
        cur = rho * np.array([runs[i][k] for k in common])
        prev = rho * np.array([runs[i - 1][k] for k in common])
        with np.errstate(over="ignore"):
            diff = np.exp(cur) - np.exp(prev)
        rise = float(diff.mean())
        se = float(diff.std(ddof=1) / math.sqrt(len(common))) if len(common) > 1 else math.inf
        fires = rise > rel_tol * rows[i - 1]["estimate"] and rise > STDERR_MULT * se
        rows[i].update({"paired_rise": rise, "paired_stderr": se, "rise_significant": bool(fires)})
        flagged |= fires
    heavy = rows[-1]["relative_stderr"] > rel_se_tol
    return {"rho": rho, "reps": config.reps, "rows": rows, "heavy_tail": bool(heavy),
            "diverging": bool(flagged or heavy)}
