"""Canonical exponential families and their cumulant calculus.

A family is described by its log-partition function ``d`` on the natural
domain.  Observations under ``P_u`` have log-density ``y*u - d(u) + l(y)``,
mean ``d'(u)`` and variance ``d''(u)``.

The module also houses the *true* response laws used to compute rate
functions and to simulate data.  A true law need not belong to the fitted
family (misspecification); it only has to expose its means, its centered
cumulant and a sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "DomainError",
    "EfcFamily",
    "gaussian",
    "poisson",
    "bernoulli",
    "family_from_token",
    "log_partition",
    "centered_cumulant",
    "subgaussian_scale",
    "tilted_variance",
    "EfcLaw",
    "GaussianNoiseLaw",
]

SCALE_BOUNDS = (1e-6, 1e6)
LAMBDA_GRID_POINTS = 200


class DomainError(ValueError):
    """A canonical parameter left the natural domain of the family."""


@dataclass(frozen=True)
class EfcFamily:
    """An exponential family with canonical parametrization.

    ``lower``/``upper`` delimit the natural domain; both ends are exclusive.
    """

    name: str
    d: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d_dot: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d_ddot: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    canonical_from_mean: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    sampler: Callable[[np.random.Generator, np.ndarray], np.ndarray] = field(repr=False)
    lower: float = -np.inf
    upper: float = np.inf
    mean_range: tuple[float, float] = (-np.inf, np.inf)
    sigma: float | None = None

    @property
    def token(self) -> str:
        if self.name == "gaussian":
            return f"gaussian:{self.sigma:g}"
        return self.name

    def check_domain(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        bad = ~np.isfinite(u) | (u <= self.lower) | (u >= self.upper)
        if np.any(bad):
            worst = u[bad].flat[0] if u.ndim else float(u)
            raise DomainError(
                f"{self.token}: canonical value {worst!r} outside natural domain "
                f"({self.lower}, {self.upper})"
            )
        return u

    def check_means(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        lo, hi = self.mean_range
        if np.any(~np.isfinite(b)) or np.any(b < lo) or np.any(b > hi):
            raise ValueError(f"{self.token}: means must lie in [{lo}, {hi}]")
        return b

    def check_support(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("responses must be finite")
        if self.name == "poisson" and (np.any(y < 0) or np.any(y != np.round(y))):
            raise ValueError("poisson responses must be non-negative integers")
        if self.name == "bernoulli" and not np.all((y == 0) | (y == 1)):
            raise ValueError("bernoulli responses must be 0 or 1")
        return y

    # vectorised value / derivative helpers with domain checks
    def log_partition(self, u):
        return self.d(self.check_domain(u))

    def mean(self, u):
        return self.d_dot(self.check_domain(u))

    def variance(self, u):
        return self.d_ddot(self.check_domain(u))

    def centered_cumulant(self, u, t):
        """``d(u+t) - d(u) - t d'(u)``, the log-mgf of ``t (Y - E Y)``."""
        u = self.check_domain(u)
        t = np.asarray(t, dtype=float)
        ut = self.check_domain(u + t)
        if self.name == "gaussian":
            # exact; avoids cancellation for large |u|
            return 0.5 * self.sigma**2 * t * t + 0.0 * ut
        return self.d(ut) - self.d(u) - t * self.d_dot(u)

    def sample(self, rng: np.random.Generator, u) -> np.ndarray:
        return self.sampler(rng, self.check_domain(u))


def gaussian(sigma: float = 1.0) -> EfcFamily:
    """Gaussian family with variance ``sigma**2``: ``d(u) = sigma**2 u**2 / 2``."""
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    s2 = sigma * sigma
    return EfcFamily(
        name="gaussian",
        d=lambda u: 0.5 * s2 * u * u,
        d_dot=lambda u: s2 * u,
        d_ddot=lambda u: np.full_like(np.asarray(u, dtype=float), s2),
        canonical_from_mean=lambda m: np.asarray(m, dtype=float) / s2,
        sampler=lambda rng, u: s2 * u + sigma * rng.standard_normal(np.shape(u)),
        sigma=sigma,
    )


def poisson() -> EfcFamily:
    return EfcFamily(
        name="poisson",
        d=np.exp,
        d_dot=np.exp,
        d_ddot=np.exp,
        canonical_from_mean=lambda m: np.log(np.asarray(m, dtype=float)),
        sampler=lambda rng, u: rng.poisson(np.exp(u)).astype(float),
        mean_range=(0.0, np.inf),
    )


def _bernoulli_var(u):
    p = expit(u)
    return p * (1.0 - p)


def bernoulli() -> EfcFamily:
    return EfcFamily(
        name="bernoulli",
        d=lambda u: np.logaddexp(0.0, u),
        d_dot=expit,
        d_ddot=_bernoulli_var,
        canonical_from_mean=lambda m: logit(np.asarray(m, dtype=float)),
        sampler=lambda rng, u: (rng.random(np.shape(u)) < expit(u)).astype(float),
        mean_range=(0.0, 1.0),
    )


def family_from_token(token: str) -> EfcFamily:
    """Parse ``"gaussian:SIGMA"``, ``"gaussian"``, ``"poisson"`` or ``"bernoulli"``."""
    name, _, arg = str(token).strip().partition(":")
    name = name.lower()
    if name == "gaussian":
        return gaussian(float(arg) if arg else 1.0)
    if arg:
        raise ValueError(f"family {name!r} takes no parameter")
    if name == "poisson":
        return poisson()
    if name == "bernoulli":
        return bernoulli()
    raise ValueError(f"unknown family token {token!r}")


def log_partition(family: EfcFamily, u: float) -> float:
    return float(family.log_partition(u))


def centered_cumulant(family: EfcFamily, u: float, t: float) -> float:
    return float(family.centered_cumulant(u, t))


def tilted_variance(family: EfcFamily, f, t):
    """Variance of the exponentially tilted response, ``d''(f + t)``."""
    return family.variance(np.asarray(f, dtype=float) + np.asarray(t, dtype=float))


def _max_excess(family, u, lam, scale):
    return np.max(family.centered_cumulant(u, 2.0 * lam / scale) - 2.0 * lam * lam)


def subgaussian_scale(
    family: EfcFamily,
    u: float,
    lambda1_star: float,
    *,
    n_lambda: int = LAMBDA_GRID_POINTS,
    bounds: tuple[float, float] = SCALE_BOUNDS,
    rtol: float = 1e-10,
) -> float:
    """Smallest scale ``n`` with ``c(u, 2 lam / n) <= 2 lam**2`` for ``|lam| <= lambda1_star``.

    The condition is checked on ``n_lambda`` equispaced values of ``lam``.
    Feasibility is monotone in ``n`` (the cumulant is convex with minimum at
    zero), so a log-scale bisection returns the feasible end of the bracket.
    Gaussian families return ``sigma`` exactly.
    """
    if not lambda1_star > 0:
        raise ValueError("lambda1_star must be positive")
    family.check_domain(u)
    if family.name == "gaussian":
        return float(family.sigma)
    if not np.isfinite(lambda1_star):
        raise ValueError(f"{family.token}: no finite scale for unbounded lambda1_star")
    lam = np.linspace(-lambda1_star, lambda1_star, n_lambda)
    lo, hi = bounds

    def excess(scale):
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                val = _max_excess(family, u, lam, scale)
            except DomainError:
                return np.inf
        return val if np.isfinite(val) else np.inf

    if excess(hi) > 0:
        worst = lam[np.argmax(family.centered_cumulant(u, 2 * lam / hi) - 2 * lam**2)]
        raise ValueError(
            f"{family.token}: no scale up to {hi:g} satisfies the sub-Gaussian "
            f"condition at u={u}; violated at lambda={worst:g}"
        )
    if excess(lo) <= 0:
        return lo
    llo, lhi = np.log(lo), np.log(hi)
    while lhi - llo > rtol:
        mid = 0.5 * (llo + lhi)
        if excess(np.exp(mid)) <= 0:
            lhi = mid
        else:
            llo = mid
    return float(np.exp(lhi))


# --------------------------------------------------------------------------
# true response laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EfcLaw:
    """Independent responses ``Y_i ~ P_{f_i}`` from an EFC."""

    family: EfcFamily
    natural: np.ndarray

    def __post_init__(self):
        f = self.family.check_domain(np.atleast_1d(np.asarray(self.natural, dtype=float)))
        object.__setattr__(self, "natural", f)

    @classmethod
    def from_means(cls, family: EfcFamily, means) -> EfcLaw:
        b = family.check_means(np.atleast_1d(means))
        with np.errstate(divide="ignore"):
            f = family.canonical_from_mean(b)
        return cls(family, f)

    @property
    def n(self) -> int:
        return self.natural.size

    @property
    def means(self) -> np.ndarray:
        return self.family.d_dot(self.natural)

    @property
    def variances(self) -> np.ndarray:
        return self.family.d_ddot(self.natural)

    def cumulant(self, t) -> np.ndarray:
        """Per-observation ``log E exp{t_i (Y_i - b_i)}``."""
        return self.family.centered_cumulant(self.natural, t)

    def tilted_mean(self, t) -> np.ndarray:
        """Mean of ``Y_i`` under the law tilted by ``exp{t_i Y_i}``."""
        return self.family.mean(self.natural + np.asarray(t, dtype=float))

    def tilted_variance(self, t) -> np.ndarray:
        return tilted_variance(self.family, self.natural, t)

    def scales(self, lambda1_star: float) -> np.ndarray:
        uniq, inv = np.unique(self.natural, return_inverse=True)
        vals = np.array([subgaussian_scale(self.family, u, lambda1_star) for u in uniq])
        return vals[inv.reshape(-1)]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.family.sample(rng, self.natural)


@dataclass(frozen=True)
class GaussianNoiseLaw:
    """``Y_i = b_i + sigma_i * N(0, 1)``; ``sigma = 0`` gives degenerate data."""

    means: np.ndarray
    sigma: float | np.ndarray = 1.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.means, dtype=float))
        s = np.broadcast_to(np.asarray(self.sigma, dtype=float), b.shape).copy()
        if np.any(s < 0) or not np.all(np.isfinite(b)):
            raise ValueError("noise sigma must be non-negative and means finite")
        object.__setattr__(self, "means", b)
        object.__setattr__(self, "sigma", s)

    @property
    def n(self) -> int:
        return self.means.size

    @property
    def variances(self) -> np.ndarray:
        return self.sigma**2

    def cumulant(self, t) -> np.ndarray:
        return 0.5 * self.sigma**2 * np.asarray(t, dtype=float) ** 2

    def tilted_mean(self, t) -> np.ndarray:
        return self.means + self.sigma**2 * np.asarray(t, dtype=float)

    def tilted_variance(self, t) -> np.ndarray:
        return np.broadcast_to(self.sigma**2, np.broadcast(self.sigma, t).shape).copy()

    def scales(self, lambda1_star: float) -> np.ndarray:
        return self.sigma.copy()

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.means + self.sigma * rng.standard_normal(self.means.shape)
