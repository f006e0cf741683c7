"""Single-index quasi-likelihood with a known link.

The canonical parameter of observation ``i`` is ``g(X_i' theta)``; the rest
mirrors :mod:`qlc.glm`.  Because the objective is not concave in ``theta``,
targets and estimators use a deterministic multistart lattice and report
multimodality instead of resolving it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._optim import ConvergenceError, maximize_in_box
from .efc import DomainError, EfcFamily, EfcLaw

__all__ = [
    "LinkFunction",
    "identity_link",
    "logistic_link",
    "tanh_link",
    "sin_link",
    "link_from_token",
    "SiModel",
    "MultistartResult",
    "si_loglik",
    "si_gradient",
    "si_hessian",
    "si_target_theta0",
    "si_v_matrix",
    "si_rate_function",
    "si_rate_gradient",
    "si_rate_hessian",
    "si_identifiability_matrix",
    "si_fit",
    "start_lattice",
]

LATTICE_FRACTIONS = (1 / 6, 1 / 2, 5 / 6)


@dataclass(frozen=True)
class LinkFunction:
    name: str
    g: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    g_dot: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    g_ddot: Callable[[np.ndarray], np.ndarray] = field(repr=False)


def identity_link() -> LinkFunction:
    return LinkFunction(
        "identity",
        lambda u: np.asarray(u, dtype=float),
        lambda u: np.ones_like(np.asarray(u, dtype=float)),
        lambda u: np.zeros_like(np.asarray(u, dtype=float)),
    )


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


def logistic_link() -> LinkFunction:
    def dot(u):
        s = _sigmoid(u)
        return s * (1 - s)

    def ddot(u):
        s = _sigmoid(u)
        return s * (1 - s) * (1 - 2 * s)

    return LinkFunction("logistic", _sigmoid, dot, ddot)


def tanh_link() -> LinkFunction:
    def dot(u):
        return 1.0 / np.cosh(u) ** 2

    def ddot(u):
        return -2.0 * np.tanh(u) / np.cosh(u) ** 2

    return LinkFunction("tanh", np.tanh, dot, ddot)


def sin_link() -> LinkFunction:
    return LinkFunction("sin", np.sin, np.cos, lambda u: -np.sin(u))


_LINKS = {"identity": identity_link, "logistic": logistic_link, "tanh": tanh_link, "sin": sin_link}


def link_from_token(token: str) -> LinkFunction:
    try:
        return _LINKS[str(token).strip().lower()]()
    except KeyError:
        raise ValueError(f"unknown link {token!r}; choose from {sorted(_LINKS)}") from None


@dataclass(frozen=True)
class SiModel:
    X: np.ndarray
    family: EfcFamily
    link: LinkFunction
    mu: float = 1.0
    responses: np.ndarray | None = None
    box_lower: np.ndarray | None = None
    box_upper: np.ndarray | None = None
    true_f: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.X, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if not np.all(np.isfinite(x)):
            raise ValueError("explanatory vectors must be finite")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ValueError("mu must be positive")
        n, d = x.shape
        object.__setattr__(self, "X", x)
        if self.responses is not None:
            y = self.family.check_support(np.asarray(self.responses, dtype=float).reshape(-1))
            if y.size != n:
                raise ValueError(f"{y.size} responses for {n} rows")
            object.__setattr__(self, "responses", y)
        if self.true_f is not None:
            f = self.family.check_domain(np.asarray(self.true_f, dtype=float).reshape(-1))
            if f.size != n:
                raise ValueError(f"{f.size} true canonical values for {n} rows")
            object.__setattr__(self, "true_f", f)
        lo = np.full(d, -np.inf) if self.box_lower is None else np.broadcast_to(
            np.asarray(self.box_lower, dtype=float), (d,)).copy()
        hi = np.full(d, np.inf) if self.box_upper is None else np.broadcast_to(
            np.asarray(self.box_upper, dtype=float), (d,)).copy()
        if np.any(lo >= hi):
            raise ValueError("parameter box needs lower < upper")
        object.__setattr__(self, "box_lower", lo)
        object.__setattr__(self, "box_upper", hi)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def replace(self, **changes) -> SiModel:
        fields = {k: getattr(self, k) for k in
                  ("X", "family", "link", "mu", "responses", "box_lower", "box_upper", "true_f")}
        fields.update(changes)
        return SiModel(**fields)

    def true_law(self):
        if self.true_f is None:
            raise ValueError("model has no true canonical values (true_f)")
        return EfcLaw(self.family, self.true_f)

    def _y(self):
        if self.responses is None:
            raise ValueError("model has no responses")
        return self.responses


@dataclass
class MultistartResult:
    theta: np.ndarray
    value: float
    grad_norm: float
    multimodal: bool
    objective_gap: float
    local_maxima: list[dict]
    starts: list[dict]

    @property
    def diagnostics(self) -> dict:
        return {
            "value": self.value,
            "grad_norm": self.grad_norm,
            "multimodal": self.multimodal,
            "objective_gap": self.objective_gap,
            "local_maxima": self.local_maxima,
            "starts": self.starts,
        }

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), **self.diagnostics}


# --------------------------------------------------------------------------
# quasi log-likelihood
# --------------------------------------------------------------------------


def _index(model, theta):
    return np.asarray(theta, dtype=float) @ model.X.T


def _canon(model, theta):
    u = _index(model, theta)
    return u, model.family.check_domain(model.link.g(u))


def si_loglik(model: SiModel, theta):
    _, eta = _canon(model, theta)
    out = model.mu * np.sum(model._y() * eta - model.family.d(eta), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def si_gradient(model: SiModel, theta) -> np.ndarray:
    u, eta = _canon(model, theta)
    w = (model._y() - model.family.d_dot(eta)) * model.link.g_dot(u)
    return model.mu * w @ model.X


def si_hessian(model: SiModel, theta) -> np.ndarray:
    u, eta = _canon(model, theta)
    fam, link = model.family, model.link
    w = (model._y() - fam.d_dot(eta)) * link.g_ddot(u) - fam.d_ddot(eta) * link.g_dot(u) ** 2
    return model.mu * (model.X.T * w) @ model.X


# --------------------------------------------------------------------------
# multistart ascent
# --------------------------------------------------------------------------


def start_lattice(lower, upper) -> np.ndarray:
    """``3**d`` starts at fractions 1/6, 1/2, 5/6 of each box side."""
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("multistart needs a finite parameter box")
    fr = np.array(list(itertools.product(LATTICE_FRACTIONS, repeat=lower.size)))
    return lower + fr * (upper - lower)


def _multistart(model, fun, grad, hess, starts, tol, max_iter, distinct_tol) -> MultistartResult:
    records, good = [], []
    for x0 in starts:
        try:
            res = maximize_in_box(fun, grad, hess, x0, model.box_lower, model.box_upper,
                                  tol=tol, max_iter=max_iter)
        except DomainError as exc:
            records.append({"start": np.asarray(x0).tolist(), "converged": False, "error": str(exc)})
            continue
        h = hess(res.x)
        free = ~((res.x <= model.box_lower) | (res.x >= model.box_upper))
        eig = np.linalg.eigvalsh(h[np.ix_(free, free)]) if np.any(free) else np.zeros(1)
        is_max = bool(eig.max(initial=-np.inf) <= 1e-8 * max(1.0, np.abs(eig).max(initial=0.0)))
        rec = {"start": np.asarray(x0).tolist(), "theta": res.x.tolist(), **res.diagnostics(),
               "local_max": is_max}
        records.append(rec)
        if res.converged:
            good.append((res.value, res.x, res.grad_norm, is_max))
    if not good:
        raise ConvergenceError("no multistart run converged", None, None)
    # best objective; near-ties broken by lexicographic theta
    best_val = max(v for v, *_ in good)
    tied = [g for g in good if g[0] >= best_val - tol * max(1.0, abs(best_val))]
    tied.sort(key=lambda g: tuple(g[1]))
    value, theta, gnorm, _ = tied[0]
    maxima: list[tuple[float, np.ndarray]] = []
    for v, x, _, is_max in sorted(good, key=lambda g: (-g[0], tuple(g[1]))):
        if is_max and all(np.linalg.norm(x - m) > distinct_tol for _, m in maxima):
            maxima.append((v, x))
    gap = max((value - v for v, _ in maxima), default=0.0)
    return MultistartResult(
        theta=theta, value=float(value), grad_norm=float(gnorm),
        multimodal=len(maxima) > 1, objective_gap=float(gap),
        local_maxima=[{"theta": x.tolist(), "value": float(v)} for v, x in maxima],
        starts=records,
    )


def _starts(model, extra):
    pts = start_lattice(model.box_lower, model.box_upper)
    if extra is not None:
        pts = np.vstack([np.atleast_2d(np.asarray(extra, dtype=float)), pts])
    return pts


def si_target_theta0(model: SiModel, tol: float = 1e-9, max_iter: int = 200, extra_starts=None,
                     distinct_tol: float = 1e-4) -> MultistartResult:
    """Maximize ``sum_i {d'(f_i) g(X_i' theta) - d(g(X_i' theta))}`` over the box."""
    b = model.true_law().means
    det = model.replace(mu=1.0, responses=None)
    object.__setattr__(det, "responses", b)
    return _multistart(det, lambda t: si_loglik(det, t), lambda t: si_gradient(det, t),
                       lambda t: si_hessian(det, t), _starts(model, extra_starts),
                       tol, max_iter, distinct_tol)


def si_fit(model: SiModel, tol: float = 1e-9, max_iter: int = 200, extra_starts=None,
           distinct_tol: float = 1e-4) -> MultistartResult:
    """Quasi-MLE by multistart ascent; the best local maximizer wins."""
    return _multistart(model, lambda t: si_loglik(model, t), lambda t: si_gradient(model, t),
                       lambda t: si_hessian(model, t), _starts(model, extra_starts),
                       tol, max_iter, distinct_tol)


# --------------------------------------------------------------------------
# geometry and rate function
# --------------------------------------------------------------------------


def si_v_matrix(model: SiModel, theta, lambda1_star: float, law=None, n_scales=None) -> np.ndarray:
    """``V(theta) = mu^2 sum n_i^2 g'(X_i' theta)^2 X_i X_i'``."""
    if n_scales is None:
        law = model.true_law() if law is None else law
        scales = law.scales(lambda1_star)
    else:
        scales = np.broadcast_to(np.asarray(n_scales, dtype=float), (model.n,))
    w = (scales * model.link.g_dot(_index(model, theta))) ** 2
    v = model.mu**2 * (model.X.T * w) @ model.X
    return 0.5 * (v + v.T)


def _rate_parts(model, theta, theta0, law):
    law = model.true_law() if law is None else law
    fam, mu = model.family, model.mu
    u, g = _canon(model, theta)
    _, g0 = _canon(model, theta0)
    delta = g - g0
    try:
        cum = law.cumulant(mu * delta)
    except DomainError as exc:
        raise DomainError(
            "tilted canonical value f_i + mu*(g(X_i' theta) - g(X_i' theta0)) "
            f"left the natural domain: {exc}"
        ) from None
    return law, fam, mu, u, g, g0, delta, cum


def si_rate_function(model: SiModel, theta, theta0, law=None):
    """``sum_i {d(f_i) - d(f_i + mu delta_i) + mu d(g_i) - mu d(g0_i)}`` for EFC truth.

    ``delta_i = g(X_i' theta) - g(X_i' theta0)``.  A non-EFC ``law`` enters
    through its mean and centered cumulant.
    """
    law, fam, mu, _, g, g0, delta, cum = _rate_parts(model, theta, theta0, law)
    out = mu * np.sum(fam.d(g) - fam.d(g0) - delta * law.means, axis=-1) - np.sum(cum, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def si_rate_gradient(model: SiModel, theta, theta0, law=None) -> np.ndarray:
    law, fam, mu, u, g, _, delta, _ = _rate_parts(model, theta, theta0, law)
    w = (fam.d_dot(g) - law.tilted_mean(mu * delta)) * model.link.g_dot(u)
    return mu * w @ model.X


def si_rate_hessian(model: SiModel, theta, theta0, law=None) -> np.ndarray:
    """Analytic Hessian of :func:`si_rate_function` in ``theta``."""
    law, fam, mu, u, g, _, delta, _ = _rate_parts(model, theta, theta0, law)
    gd, gdd = model.link.g_dot(u), model.link.g_ddot(u)
    w = (mu * (fam.d_ddot(g) * gd**2 + (fam.d_dot(g) - law.tilted_mean(mu * delta)) * gdd)
         - mu * mu * law.tilted_variance(mu * delta) * gd**2)
    return (model.X.T * w) @ model.X


def si_identifiability_matrix(model: SiModel, theta, law=None) -> np.ndarray:
    """``(1/n) sum {d''(g_i) g'_i^2 + (d'(g_i) - b_i) g''_i} X_i X_i'``.

    This is the small-``mu`` limit of the rate Hessian divided by ``mu n``.
    """
    law = model.true_law() if law is None else law
    fam = model.family
    u, g = _canon(model, theta)
    gd, gdd = model.link.g_dot(u), model.link.g_ddot(u)
    w = fam.d_ddot(g) * gd**2 + (fam.d_dot(g) - law.means) * gdd
    return (model.X.T * w) @ model.X / model.n

