"""Generalized linear quasi-likelihood.

The model is ``L(theta) = mu * sum_i {Y_i psi_i' theta - d(psi_i' theta)}``
for an EFC log-partition ``d``.  Functions evaluating at ``theta`` accept a
single point of shape ``(p,)`` or a stack of points ``(m, p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._optim import AscentResult, ConvergenceError, maximize_in_box
from .efc import EfcFamily, EfcLaw, GaussianNoiseLaw

__all__ = [
    "GlmModel",
    "GlmGeometry",
    "TargetSpec",
    "IdentifiabilityReport",
    "FitResult",
    "well_specified_law",
    "quasi_loglik",
    "loglik_diff",
    "loglik_gradient",
    "loglik_hessian",
    "fit_qmle",
    "target_theta0",
    "rate_function",
    "rate_gradient",
    "rate_hessian",
    "glm_geometry",
    "identifiability_constants",
    "check_glm_conditions",
    "range_whitener",
]

TrueLaw = EfcLaw | GaussianNoiseLaw


@dataclass(frozen=True)
class GlmModel:
    design: np.ndarray
    family: EfcFamily
    mu: float = 1.0
    responses: np.ndarray | None = None
    box_lower: np.ndarray | None = None
    box_upper: np.ndarray | None = None

    def __post_init__(self):
        psi = np.asarray(self.design, dtype=float)
        if psi.ndim == 1:
            psi = psi[:, None]
        n, p = psi.shape
        if not n >= p >= 1:
            raise ValueError(f"design must have n >= p >= 1 (got n={n}, p={p})")
        if not np.all(np.isfinite(psi)):
            raise ValueError("design entries must be finite")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ValueError("mu must be positive")
        object.__setattr__(self, "design", psi)
        if self.responses is not None:
            y = self.family.check_support(np.asarray(self.responses, dtype=float).reshape(-1))
            if y.size != n:
                raise ValueError(f"{y.size} responses for {n} design rows")
            object.__setattr__(self, "responses", y)
        lo = np.full(p, -np.inf) if self.box_lower is None else np.broadcast_to(
            np.asarray(self.box_lower, dtype=float), (p,)).copy()
        hi = np.full(p, np.inf) if self.box_upper is None else np.broadcast_to(
            np.asarray(self.box_upper, dtype=float), (p,)).copy()
        if np.any(lo >= hi):
            raise ValueError("parameter box needs lower < upper")
        object.__setattr__(self, "box_lower", lo)
        object.__setattr__(self, "box_upper", hi)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def with_responses(self, y) -> GlmModel:
        return GlmModel(self.design, self.family, self.mu, y, self.box_lower, self.box_upper)

    def with_mu(self, mu: float) -> GlmModel:
        return GlmModel(self.design, self.family, mu, self.responses, self.box_lower, self.box_upper)

    def box_corners(self) -> np.ndarray:
        if not (np.all(np.isfinite(self.box_lower)) and np.all(np.isfinite(self.box_upper))):
            raise ValueError("box corners need a finite parameter box")
        idx = np.indices((2,) * self.p).reshape(self.p, -1).T
        return np.where(idx == 0, self.box_lower, self.box_upper)

    def _y(self) -> np.ndarray:
        if self.responses is None:
            raise ValueError("model has no responses")
        return self.responses


@dataclass(frozen=True)
class GlmGeometry:
    n_scales: np.ndarray
    V1: np.ndarray
    V: np.ndarray
    lambda1_star: float

    def to_dict(self) -> dict:
        return {
            "n_scales": self.n_scales.tolist(),
            "V1": self.V1.tolist(),
            "V": self.V.tolist(),
            "lambda1_star": self.lambda1_star,
        }


@dataclass(frozen=True)
class TargetSpec:
    true_means: np.ndarray
    theta0: np.ndarray
    grad_residual: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "true_means": self.true_means.tolist(),
            "theta0": self.theta0.tolist(),
            "grad_residual": self.grad_residual,
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class IdentifiabilityReport:
    a: float
    a1: float
    s: float
    mu_max: float
    mu_ok: bool
    rank_deficient: bool
    region: dict

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("a", "a1", "s", "mu_max", "mu_ok", "rank_deficient", "region")}


@dataclass
class FitResult:
    theta: np.ndarray
    loglik: float
    diagnostics: dict

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "loglik": self.loglik, "diagnostics": self.diagnostics}


def well_specified_law(model: GlmModel, theta_star) -> EfcLaw:
    """True law with ``E Y_i = d'(psi_i' theta_star)`` from the fitted family."""
    return EfcLaw(model.family, model.design @ np.asarray(theta_star, dtype=float))


# --------------------------------------------------------------------------
# quasi log-likelihood
# --------------------------------------------------------------------------


def _eta(model, theta):
    return np.asarray(theta, dtype=float) @ model.design.T


def quasi_loglik(model: GlmModel, theta) -> np.ndarray | float:
    eta = model.family.check_domain(_eta(model, theta))
    out = model.mu * np.sum(model._y() * eta - model.family.d(eta), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def loglik_diff(model: GlmModel, theta, theta_ref):
    """``L(theta, theta_ref) = L(theta) - L(theta_ref)``."""
    return quasi_loglik(model, theta) - quasi_loglik(model, theta_ref)


def loglik_gradient(model: GlmModel, theta) -> np.ndarray:
    eta = model.family.check_domain(_eta(model, theta))
    return model.mu * (model._y() - model.family.d_dot(eta)) @ model.design


def loglik_hessian(model: GlmModel, theta) -> np.ndarray:
    eta = model.family.check_domain(_eta(model, theta))
    w = model.family.d_ddot(eta)
    return -model.mu * (model.design.T * w) @ model.design


def _ascent_diagnostics(res: AscentResult, start) -> dict:
    out = res.diagnostics()
    out["start"] = np.asarray(start, dtype=float).tolist()
    return out


def fit_qmle(
    model: GlmModel,
    init=None,
    tol: float = 1e-9,
    max_iter: int = 200,
    *,
    raise_on_failure: bool = True,
) -> FitResult:
    """Quasi-MLE over the model box by damped Newton from ``init``.

    The objective is concave, so a single start suffices; the returned value
    never falls below ``L(init)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x0 = np.zeros(model.p) if init is None else np.asarray(init, dtype=float).reshape(model.p)
    if np.any(x0 < model.box_lower) or np.any(x0 > model.box_upper):
        raise ValueError("init must lie in the parameter box")
    res = maximize_in_box(
        lambda t: quasi_loglik(model, t),
        lambda t: loglik_gradient(model, t),
        lambda t: loglik_hessian(model, t),
        x0, model.box_lower, model.box_upper, tol=tol, max_iter=max_iter,
    )
    diag = _ascent_diagnostics(res, x0)
    diag["at_box_face"] = bool(np.any(res.x <= model.box_lower) or np.any(res.x >= model.box_upper))
    if not res.converged and raise_on_failure:
        raise ConvergenceError(
            f"quasi-MLE did not converge in {max_iter} iterations "
            f"(projected gradient norm {res.grad_norm:.3e})",
            res.x, res.grad_norm,
        )
    return FitResult(res.x, res.value, diag)


def target_theta0(
    design,
    family: EfcFamily,
    true_means,
    mu: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 200,
    init=None,
) -> TargetSpec:
    """Best parametric fit: root of ``sum_i {b_i - d'(psi_i' theta)} psi_i``.

    ``mu`` scales the objective only and therefore does not move the root;
    it is accepted so that callers can pass a model's settings verbatim.
    """
    model = GlmModel(design, family, mu)
    b = family.check_means(np.asarray(true_means, dtype=float).reshape(-1))
    if b.size != model.n:
        raise ValueError(f"{b.size} true means for {model.n} design rows")
    det = model.with_mu(1.0)
    # the deterministic objective is the quasi-likelihood at Y = b, without support checks
    object.__setattr__(det, "responses", b)
    scale = max(1.0, float(np.abs(b) @ np.abs(det.design).sum(axis=1)))
    x0 = np.zeros(model.p) if init is None else np.asarray(init, dtype=float)
    res = maximize_in_box(
        lambda t: quasi_loglik(det, t),
        lambda t: loglik_gradient(det, t),
        lambda t: loglik_hessian(det, t),
        x0, -np.inf, np.inf, tol=tol * scale, max_iter=max_iter,
    )
    resid = float(np.linalg.norm(loglik_gradient(det, res.x)))
    if not res.converged:
        raise ConvergenceError(
            f"target equation not solved: residual {resid:.3e}; "
            "the means may lie outside the range the design can reach",
            res.x, resid,
        )
    return TargetSpec(b, res.x, resid, _ascent_diagnostics(res, x0))


# --------------------------------------------------------------------------
# rate function
# --------------------------------------------------------------------------


def _law(model, theta0, law):
    return law if law is not None else well_specified_law(model, theta0)


def rate_function(model: GlmModel, theta, theta0, law: TrueLaw | None = None):
    """``-log E exp{L(theta) - L(theta0)}`` under ``law``.

    Without ``law`` the data are taken as well specified with truth ``theta0``.
    """
    law = _law(model, theta0, law)
    fam, mu = model.family, model.mu
    eta = fam.check_domain(_eta(model, theta))
    eta0 = fam.check_domain(_eta(model, theta0))
    du = eta - eta0
    det_part = mu * np.sum(fam.d(eta) - fam.d(eta0) - du * law.means, axis=-1)
    out = det_part - np.sum(law.cumulant(mu * du), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def rate_gradient(model: GlmModel, theta, theta0, law: TrueLaw | None = None) -> np.ndarray:
    law = _law(model, theta0, law)
    fam, mu = model.family, model.mu
    eta = fam.check_domain(_eta(model, theta))
    du = eta - _eta(model, theta0)
    return mu * (fam.d_dot(eta) - law.tilted_mean(mu * du)) @ model.design


def rate_hessian(model: GlmModel, theta, theta0, law: TrueLaw | None = None) -> np.ndarray:
    law = _law(model, theta0, law)
    fam, mu = model.family, model.mu
    eta = fam.check_domain(_eta(model, theta))
    du = eta - _eta(model, theta0)
    w = mu * fam.d_ddot(eta) - mu * mu * law.tilted_variance(mu * du)
    return (model.design.T * w) @ model.design


# --------------------------------------------------------------------------
# geometry and identifiability
# --------------------------------------------------------------------------


def glm_geometry(
    model: GlmModel,
    lambda1_star: float,
    law: TrueLaw | None = None,
    n_scales=None,
) -> GlmGeometry:
    """``V1 = sum n_i^2 psi_i psi_i'`` and ``V = mu^2 V1``.

    Scales come from ``n_scales`` when given, else from the sub-Gaussian
    scale of each observation under ``law``.
    """
    if n_scales is None:
        if law is None:
            raise ValueError("glm_geometry needs a true law or explicit scales")
        scales = law.scales(lambda1_star)
    else:
        scales = np.broadcast_to(np.asarray(n_scales, dtype=float), (model.n,)).copy()
    if np.any(scales < 0):
        raise ValueError("scales must be non-negative")
    psi = model.design
    v1 = (psi.T * scales**2) @ psi
    v1 = 0.5 * (v1 + v1.T)
    return GlmGeometry(scales, v1, model.mu**2 * v1, float(lambda1_star))


def range_whitener(v1: np.ndarray, rtol: float = 1e-12) -> tuple[np.ndarray, bool]:
    """``W`` with ``W' V1 W = I`` on the range of ``V1``; flag rank deficiency."""
    vals, vecs = np.linalg.eigh(v1)
    keep = vals > rtol * max(vals.max(initial=0.0), np.finfo(float).tiny)
    if not np.any(keep):
        raise ValueError("V1 is zero")
    return vecs[:, keep] / np.sqrt(vals[keep]), bool(not np.all(keep))


def identifiability_constants(
    model: GlmModel,
    geometry: GlmGeometry,
    theta0,
    grid,
    law: TrueLaw | None = None,
) -> IdentifiabilityReport:
    """Constants of the two-sided quadratic comparison over ``grid``.

    ``a1`` is the largest value with ``(1/2) sum d''(psi_i' theta) psi_i psi_i'
    >= 2 a1 V1`` at every grid point; ``a**2`` is the smallest value with
    ``(1/2) sum s_i^2(theta) psi_i psi_i' <= a**2 V1``, where ``s_i^2`` is the
    tilted variance at tilt ``mu psi_i'(theta - theta0)``.
    """
    law = _law(model, theta0, law)
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if pts.size == 0:
        raise ValueError("grid must be non-empty")
    whiten, deficient = range_whitener(geometry.V1)
    psi_w = model.design @ whiten
    eta0 = _eta(model, theta0)
    lo_vals, hi_vals = [], []
    for theta in pts:
        eta = model.family.check_domain(_eta(model, theta))
        curv = 0.5 * (psi_w.T * model.family.d_ddot(eta)) @ psi_w
        tilt = 0.5 * (psi_w.T * law.tilted_variance(model.mu * (eta - eta0))) @ psi_w
        lo_vals.append(np.linalg.eigvalsh(curv)[0] / 2.0)
        hi_vals.append(np.linalg.eigvalsh(tilt)[-1])
    lo_vals, hi_vals = np.array(lo_vals), np.array(hi_vals)
    a1, a_sq = float(lo_vals.min()), float(hi_vals.max())
    if not (a1 > 0 and a_sq > 0):
        raise ValueError(f"identifiability fails on the grid (a1={a1:.3g}, a^2={a_sq:.3g})")
    a = float(np.sqrt(a_sq))
    if a1 > a:
        raise ValueError(f"a1={a1:.6g} exceeds a={a:.6g}; inconsistent constants")
    mu_max = a1 / a_sq
    region = {
        "n_points": int(pts.shape[0]),
        "lower": pts.min(axis=0).tolist(),
        "upper": pts.max(axis=0).tolist(),
        "a1_argmin": pts[int(np.argmin(lo_vals))].tolist(),
        "a_argmax": pts[int(np.argmax(hi_vals))].tolist(),
    }
    return IdentifiabilityReport(a, a1, 1.0 - a1 * a1 / a_sq, mu_max, bool(model.mu <= mu_max), deficient, region)


def check_glm_conditions(
    model: GlmModel,
    geometry: GlmGeometry,
    theta0,
    lambda_star: float,
    lambda1_star: float | None = None,
) -> dict:
    """Report the two scale conditions of the GLM exponential-moment result.

    (i) ``mu n_i |psi_i'(theta - theta0)| <= lambda1*`` over the box; the map
    is linear so the corners attain the maximum.
    (ii) ``lambda* n_i |gamma' psi_i| / |V1^{1/2} gamma| <= lambda1*`` for all
    directions.  The supremum over ``gamma`` is ``n_i sqrt(psi_i' V1^+ psi_i)``
    when ``psi_i`` lies in the range of ``V1`` and infinite otherwise.
    """
    lam1 = geometry.lambda1_star if lambda1_star is None else float(lambda1_star)
    scales = geometry.n_scales
    shifts = (model.box_corners() - np.asarray(theta0, dtype=float)) @ model.design.T
    cond1 = model.mu * np.abs(shifts) * scales
    worst1 = float(cond1.max())
    whiten, deficient = range_whitener(geometry.V1)
    psi = model.design
    proj = psi @ whiten
    leverage = np.sum(proj**2, axis=1)
    outside = np.linalg.norm(psi - proj @ (whiten.T @ geometry.V1), axis=1) > 1e-9 * (
        1 + np.linalg.norm(psi, axis=1))
    ratio = np.where(outside & (scales > 0), np.inf, scales * np.sqrt(leverage))
    worst2 = float(ratio.max())
    return {
        "lambda_star": float(lambda_star),
        "lambda1_star": lam1,
        "corner_worst": worst1,
        "corner_ok": bool(worst1 <= lam1),
        "direction_worst_ratio": worst2,
        "direction_worst_index": int(np.argmax(ratio)),
        "direction_ok": bool(lambda_star * worst2 <= lam1),
        "lambda_star_max": lam1 / worst2 if worst2 > 0 else np.inf,
        "rank_deficient": deficient,
    }
