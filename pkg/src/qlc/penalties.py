"""Penalty families, their normalizing integral and the bound constants.

A penalty is built from a decreasing weight ``kappa`` on ``[0, inf)``:

    pen(theta) = -log kappa(|sqrt(V*) (theta - theta0)| / eps + shift) / rho.

``kappa`` is one of

* quadratic: ``exp(-delta1 (t - 1)_+^2)``,
* logarithmic: ``(t + 1)^(-p - delta2)``,
* hybrid: logarithmic below ``r_threshold`` and quadratic from it on.

The normalizing integral ``P* = p int_0^inf kappa(t) t^(p-1) dt`` enters the
log-bound of the ranking variant; the smoothed penalty integral ``H_eps``
enters the general variant.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .grids import GridDomain

__all__ = [
    "PenaltySpec",
    "BoundConstants",
    "kappa",
    "pstar",
    "penalty",
    "sqrt_psd",
    "unit_ball_volume",
    "entropy_number",
    "entropy_and_volume",
    "bound_Q_main",
    "bound_Q_ranking",
    "bound_Q_quadratic",
    "check_rho_eps",
    "h_eps",
    "HEpsReport",
    "DivergenceError",
]

KINDS = ("quadratic", "logarithmic", "hybrid")
ENTROPY_INCREMENT_TOL = 1e-12


class DivergenceError(ArithmeticError):
    """An integral that must be finite diverges."""


def sqrt_psd(mat) -> np.ndarray:
    """Symmetric PSD square root via the eigen-decomposition."""
    m = np.atleast_2d(np.asarray(mat, dtype=float))
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    if vals[0] < -1e-10 * max(1.0, abs(vals[-1])):
        raise ValueError("matrix is not positive semidefinite")
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


@dataclass(frozen=True)
class PenaltySpec:
    kind: str
    vstar: np.ndarray
    theta0: np.ndarray | None = None
    rho: float = 0.5
    eps: float = 1.0
    delta1: float = 1.0
    delta2: float = 1.0
    r_threshold: float | None = None
    kappa_shift: float = 1.0
    sqrt_vstar: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"penalty kind must be one of {KINDS}")
        v = np.atleast_2d(np.asarray(self.vstar, dtype=float))
        if v.shape[0] != v.shape[1] or not np.allclose(v, v.T, atol=1e-12 * (1 + np.abs(v).max())):
            raise ValueError("V* must be a symmetric square matrix")
        object.__setattr__(self, "vstar", v)
        object.__setattr__(self, "sqrt_vstar", sqrt_psd(v))
        t0 = np.zeros(v.shape[0]) if self.theta0 is None else np.asarray(self.theta0, dtype=float).reshape(-1)
        if t0.size != v.shape[0]:
            raise ValueError("theta0 and V* dimensions differ")
        object.__setattr__(self, "theta0", t0)
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise ValueError("delta1 and delta2 must be positive")
        if self.kappa_shift < 0:
            raise ValueError("kappa_shift must be non-negative")
        if self.kind == "hybrid":
            r = self.r_threshold
            if r is None or not r > 0:
                raise ValueError("hybrid penalty needs r_threshold > 0")
            if _kappa_quadratic(r, self.delta1) > _kappa_log(r, self.p, self.delta2) * (1 + 1e-12):
                raise ValueError(
                    f"hybrid weight jumps up at r_threshold={r}: choose a larger switch radius "
                    "so that the weight stays non-increasing"
                )

    @property
    def p(self) -> int:
        return self.vstar.shape[0]

    def replace(self, **changes) -> PenaltySpec:
        kw = {k: getattr(self, k) for k in
              ("kind", "vstar", "theta0", "rho", "eps", "delta1", "delta2", "r_threshold", "kappa_shift")}
        kw.update(changes)
        return PenaltySpec(**kw)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vstar": self.vstar.tolist(),
            "theta0": self.theta0.tolist(),
            "rho": self.rho,
            "eps": self.eps,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "r_threshold": self.r_threshold,
            "kappa_shift": self.kappa_shift,
        }


def _kappa_quadratic(t, delta1):
    return np.exp(-delta1 * np.maximum(np.asarray(t, dtype=float) - 1.0, 0.0) ** 2)


def _kappa_log(t, p, delta2):
    return (np.asarray(t, dtype=float) + 1.0) ** (-p - delta2)


def kappa(spec: PenaltySpec, t):
    """Penalty weight at ``t >= 0``; values lie in ``(0, 1]``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("kappa is defined for t >= 0")
    if spec.kind == "quadratic":
        out = _kappa_quadratic(t, spec.delta1)
    elif spec.kind == "logarithmic":
        out = _kappa_log(t, spec.p, spec.delta2)
    else:
        out = np.where(t >= spec.r_threshold, _kappa_quadratic(t, spec.delta1),
                       _kappa_log(t, spec.p, spec.delta2))
    return float(out) if out.ndim == 0 else out


def _log_kappa(spec, t):
    t = np.asarray(t, dtype=float)
    quad = -spec.delta1 * np.maximum(t - 1.0, 0.0) ** 2
    logw = -(spec.p + spec.delta2) * np.log1p(t)
    if spec.kind == "quadratic":
        return quad
    if spec.kind == "logarithmic":
        return logw
    return np.where(t >= spec.r_threshold, quad, logw)


def _breakpoints(spec):
    pts = [1.0]
    if spec is not None and spec.kind == "hybrid":
        pts.append(float(spec.r_threshold))
    return sorted(set(pts))


def pstar(spec_or_kappa: PenaltySpec | Callable, p: int | None = None, quadrature_tol: float = 1e-12) -> float:
    """``p int_0^inf kappa(t) t^(p-1) dt`` by adaptive quadrature.

    The range is split at the kinks of ``kappa``.  Before integrating, a tail
    test estimates the power decay of the integrand on ``[1e4, 1e8]`` and
    raises :class:`DivergenceError` when it is no faster than ``1/t``.
    """
    if isinstance(spec_or_kappa, PenaltySpec):
        spec = spec_or_kappa
        p = spec.p
        kap = lambda t: kappa(spec, t)  # noqa: E731
    else:
        spec, kap = None, spec_or_kappa
        if p is None:
            raise ValueError("p is required with a bare kappa function")
    if p < 1:
        raise ValueError("p must be >= 1")

    def integrand(t):
        return p * kap(t) * t ** (p - 1)

    t1, t2 = 1e4, 1e8
    h1, h2 = integrand(t1), integrand(t2)
    if h2 > 0 and h1 > 0:
        decay = -(np.log(h2) - np.log(h1)) / (np.log(t2) - np.log(t1))
        if decay <= 1.0 + 1e-9:
            raise DivergenceError(f"penalty weight integral diverges (tail decay ~ t^-{decay:.4g})")
    cuts = [0.0] + _breakpoints(spec) + [np.inf]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if a == b:
            continue
        val, _ = integrate.quad(integrand, a, b, epsabs=quadrature_tol, epsrel=quadrature_tol, limit=500)
        total += val
    if not np.isfinite(total):
        raise DivergenceError("penalty weight integral is not finite")
    return float(total)


def penalty(spec: PenaltySpec, theta):
    """Penalty at ``theta`` of shape ``(p,)`` or ``(m, p)``."""
    diff = np.asarray(theta, dtype=float) - spec.theta0
    norm = np.linalg.norm(diff @ spec.sqrt_vstar, axis=-1)
    out = -_log_kappa(spec, norm / spec.eps + spec.kappa_shift) / spec.rho
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# unit-ball constants
# --------------------------------------------------------------------------


def unit_ball_volume(p: int) -> float:
    return float(np.exp(0.5 * p * np.log(np.pi) - gammaln(0.5 * p + 1)))


def entropy_number(p: int) -> float:
    """``sum_k 2^-k p log(1 + 2^(k+1))``, the dyadic entropy sum of the unit ball.

    Each term uses the volumetric covering bound ``N(delta) <= (1 + 2/delta)^p``
    at ``delta = 2^-k``; summation stops once a term drops below 1e-12.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    total, k = 0.0, 1
    while True:
        term = 2.0**-k * p * np.log1p(2.0 ** (k + 1))
        total += term
        if term < ENTROPY_INCREMENT_TOL:
            return float(total)
        k += 1


def entropy_and_volume(p: int) -> tuple[float, float]:
    """``(omega_p, Q_p)``."""
    return unit_ball_volume(p), entropy_number(p)


# --------------------------------------------------------------------------
# bound constants
# --------------------------------------------------------------------------


def _check_rho(rho):
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")


def _deviation(rho, eps):
    return 2.0 * eps**2 * rho**2 / (1.0 - rho)


def bound_Q_main(rho: float, eps: float, p: int, nu1: float, H_eps: float) -> float:
    """Log-bound for a general penalty with continuity constant ``nu1``."""
    _check_rho(rho)
    if nu1 < 1:
        raise ValueError("nu1 must be >= 1")
    return float(_deviation(rho, eps) + (1 - rho) * entropy_number(p) + H_eps + p * np.log(nu1))


def bound_Q_ranking(rho: float, eps: float, p: int, Pstar: float) -> float:
    """Log-bound for a penalty built from a weight with normalizing integral ``Pstar``."""
    _check_rho(rho)
    if not Pstar > 0:
        raise ValueError("Pstar must be positive")
    return float(_deviation(rho, eps) + (1 - rho) * entropy_number(p) + np.log(Pstar))


def bound_Q_quadratic(rho: float, s: float, a: float, a1: float, p: int) -> float:
    """Log-bound for the quadratic penalty with identifiability constants ``a1 <= a``.

    ``eps`` is fixed at ``sqrt((1 - rho) / rho)``, which turns the deviation
    term into ``2 rho``.  ``s`` is validated against ``1 - a1^2/a^2`` but the
    value itself does not enter.
    """
    _check_rho(rho)
    if not 0 < a1 <= a * (1 + 1e-12):
        raise ValueError("need 0 < a1 <= a")
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    if abs(s - (1 - a1 * a1 / (a * a))) > 1e-9:
        raise ValueError("s must equal 1 - a1^2/a^2")
    omega = unit_ball_volume(p)
    tail = np.pi ** (p / 2) / (omega * (1 - rho) ** (p / 2) * a1**p)
    return 2 * rho + (1 - rho) * entropy_number(p) + float(np.log1p(tail))


def check_rho_eps(rho: float, eps: float, lambda_star: float) -> tuple[bool, float]:
    """``rho eps / (1 - rho) <= lambda*`` and the margin ``lambda* - rho eps/(1 - rho)``."""
    _check_rho(rho)
    margin = lambda_star - rho * eps / (1 - rho)
    return bool(margin >= -1e-12 * max(1.0, abs(lambda_star))), float(margin)


@dataclass
class BoundConstants:
    """Ingredients of a log-bound and the variant that combined them."""

    rho: float
    eps: float
    p: int
    entropy_Qp: float
    omega_p: float
    log_Q: float
    C_mode: str
    nu1: float = 1.0
    Pstar: float | None = None
    H_eps: float | None = None
    s: float | None = None
    a: float | None = None
    a1: float | None = None

    def recompute(self) -> float:
        if self.C_mode == "main":
            return bound_Q_main(self.rho, self.eps, self.p, self.nu1, self.H_eps)
        if self.C_mode == "ranking":
            return bound_Q_ranking(self.rho, self.eps, self.p, self.Pstar)
        if self.C_mode == "quadratic":
            return bound_Q_quadratic(self.rho, self.s, self.a, self.a1, self.p)
        raise ValueError(f"unknown bound variant {self.C_mode!r}")

    @classmethod
    def main(cls, rho, eps, p, nu1, H_eps) -> BoundConstants:
        om, qp = entropy_and_volume(p)
        return cls(rho, eps, p, qp, om, bound_Q_main(rho, eps, p, nu1, H_eps), "main", nu1=nu1, H_eps=H_eps)

    @classmethod
    def ranking(cls, rho, eps, p, Pstar) -> BoundConstants:
        om, qp = entropy_and_volume(p)
        return cls(rho, eps, p, qp, om, bound_Q_ranking(rho, eps, p, Pstar), "ranking", Pstar=Pstar)

    @classmethod
    def quadratic(cls, rho, a, a1, p) -> BoundConstants:
        om, qp = entropy_and_volume(p)
        s = 1 - a1 * a1 / (a * a)
        return cls(rho, float(np.sqrt((1 - rho) / rho)), p, qp, om,
                   bound_Q_quadratic(rho, s, a, a1, p), "quadratic", s=s, a=a, a1=a1)

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (np.floating,)) else v) for k, v in asdict(self).items()}


# --------------------------------------------------------------------------
# smoothed penalty integral
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HEpsReport:
    value: float
    boundary_mass: float
    grid: dict


def _field_values(vfield, pts):
    if callable(vfield):
        return np.asarray(vfield(pts), dtype=float).reshape(pts.shape[0], pts.shape[1], pts.shape[1])
    v = np.atleast_2d(np.asarray(vfield, dtype=float))
    return np.broadcast_to(v, (pts.shape[0],) + v.shape)


def _local_inf(pen_vals, pts, vfield, eps, steps):
    """``inf`` of the penalty over each node's semimetric ball (grid search)."""
    from .chaining import RandomFieldSpec, semimetric_many  # local import avoids a cycle

    if not callable(vfield):
        h = sqrt_psd(vfield)
        out = np.empty_like(pen_vals)
        for i, x in enumerate(pts):
            d = np.linalg.norm((pts - x) @ h, axis=1)
            out[i] = pen_vals[d <= eps * (1 + 1e-12)].min()
        return out
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    dom = GridDomain(tuple(lo), tuple(hi), (2,) * pts.shape[1])
    spec = RandomFieldSpec(dom, lambda x: np.stack([sqrt_psd(v) for v in _field_values(vfield, x)]), steps)
    # a Euclidean window keeps the path integrals local
    lam_min = min(np.linalg.eigvalsh(v)[0] for v in _field_values(vfield, pts))
    radius = np.inf if lam_min <= 0 else 2.0 * eps / np.sqrt(lam_min)
    out = np.empty_like(pen_vals)
    for i, x in enumerate(pts):
        near = np.flatnonzero(np.max(np.abs(pts - x), axis=1) <= radius)
        d = semimetric_many(spec, x, pts[near])
        out[i] = pen_vals[near[d <= eps * (1 + 1e-12)]].min()
    return out


def h_eps(pen: Callable, vfield, grid: GridDomain, eps: float, rho: float,
          *, quadrature_steps: int = 64, details: bool = False):
    """``log{omega_p^-1 eps^-p int sqrt(det V) exp(-rho pen_eps) dtheta}`` on ``grid``.

    ``pen`` takes an ``(m, p)`` array.  ``vfield`` is a fixed matrix or a
    callable returning ``(m, p, p)``.  ``pen_eps`` is the smallest penalty
    over the grid nodes inside each node's ball.  With ``details=True`` the
    share of the integral carried by the outermost layer of cells is also
    returned; a large share means the box truncates a heavy tail.
    """
    _check_rho(rho)
    if not eps > 0:
        raise ValueError("eps must be positive")
    pts = grid.points()
    pen_vals = np.asarray(pen(pts), dtype=float).reshape(-1)
    pen_eps = _local_inf(pen_vals, pts, vfield, eps, quadrature_steps)
    dets = np.array([np.linalg.det(v) for v in _field_values(vfield, pts)])
    w = grid.cell_volumes() * np.sqrt(np.clip(dets, 0, None))
    logw = np.log(w, where=w > 0, out=np.full_like(w, -np.inf)) - rho * pen_eps
    top = logw.max()
    integral_log = top + np.log(np.sum(np.exp(logw - top)))
    p = grid.dim
    value = float(integral_log - np.log(unit_ball_volume(p)) - p * np.log(eps))
    if not np.isfinite(value):
        raise DivergenceError("smoothed penalty integral is not finite")
    if not details:
        return value
    idx = np.unravel_index(np.arange(grid.size), grid.points_per_axis)
    edge = np.zeros(grid.size, bool)
    for ax, k in zip(idx, grid.points_per_axis):
        edge |= (ax == 0) | (ax == k - 1)
    mass = np.exp(logw - top)
    return HEpsReport(value, float(mass[edge].sum() / mass.sum()), grid.to_dict())
