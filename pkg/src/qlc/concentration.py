"""Concentration sets, confidence sets and their exponential bounds.

Suprema and infima over the parameter set are replaced by extrema over the
nodes of a :class:`~qlc.grids.GridDomain`.  ``rate`` and ``pen`` arguments are
callables mapping an ``(m, p)`` array of parameters to ``m`` values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grids import GridDomain
from .penalties import bound_Q_quadratic

__all__ = [
    "z_of_set",
    "b_of_r",
    "b_curve",
    "tail_bound",
    "coverage_bound",
    "clamp_probability",
    "quadratic_minorant",
    "MinorantReport",
    "quadratic_penalty_report",
    "QuadraticPenaltyReport",
    "root_n_neighborhood",
    "RootNNeighborhood",
    "ConcentrationReport",
    "concentration_report",
    "refine_until_stable",
    "RefinementError",
]

Field = Callable[[np.ndarray], np.ndarray]


class RefinementError(RuntimeError):
    """A grid quantity kept moving under refinement."""


def _values(fn, pts):
    return np.asarray(fn(pts), dtype=float).reshape(-1)


def z_of_set(membership: Callable[[np.ndarray], np.ndarray], rate: Field, pen: Field, grid: GridDomain) -> float:
    """``min {M - pen}`` over grid nodes outside ``A``; ``inf`` when ``A`` covers the grid."""
    pts = grid.points()
    if pts.size == 0:
        raise ValueError("empty grid")
    outside = ~np.asarray(membership(pts), dtype=bool).reshape(-1)
    if not np.any(outside):
        return np.inf
    return float(np.min(_values(rate, pts[outside]) - _values(pen, pts[outside])))


def b_curve(r_values, rate_vals: np.ndarray, pen_vals: np.ndarray) -> np.ndarray:
    """``b(r)`` for each ``r`` from precomputed grid values of ``M`` and ``pen``."""
    r = np.atleast_1d(np.asarray(r_values, dtype=float))
    out = np.zeros_like(r)
    excess = pen_vals - rate_vals
    for i, ri in enumerate(r):
        mask = rate_vals > ri
        if np.any(mask):
            out[i] = max(0.0, ri + float(excess[mask].max()))
    return out


def b_of_r(r: float, rate: Field, pen: Field, grid: GridDomain) -> float:
    """``max(0, sup {r + pen - M : M > r})`` over grid nodes; 0 if no node has ``M > r``.

    ``b_of_r(0, ...)`` is the constant ``b`` used by the confidence bound.
    """
    pts = grid.points()
    return float(b_curve([r], _values(rate, pts), _values(pen, pts))[0])


def tail_bound(r, rho: float, logQ: float, b_r=0.0):
    """``exp(logQ - rho (r - b(r)))`` without clamping."""
    with np.errstate(over="ignore"):
        out = np.exp(logQ - rho * (np.asarray(r, dtype=float) - np.asarray(b_r, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def coverage_bound(z, rho: float, logQ: float, b_zero: float = 0.0):
    """``exp(logQ - rho z + rho b)`` without clamping."""
    with np.errstate(over="ignore"):
        out = np.exp(logQ - rho * np.asarray(z, dtype=float) + rho * b_zero)
    return float(out) if np.ndim(out) == 0 else out


def clamp_probability(x):
    return np.clip(x, 0.0, 1.0)


# --------------------------------------------------------------------------
# quadratic minorant and the quadratic-penalty bounds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MinorantReport:
    a_sq: float
    a: float
    argmin: list[float]
    negative_rate: bool
    n_points: int


def _qf(vstar, theta0, pts):
    diff = pts - np.asarray(theta0, dtype=float)
    return np.einsum("mi,ij,mj->m", diff, np.atleast_2d(vstar), diff)


def quadratic_minorant(rate: Field, vstar, grid: GridDomain, theta0, region_radius: float | None = None
                       ) -> MinorantReport:
    """Largest ``a**2`` with ``M >= a**2 (theta - theta0)' V* (theta - theta0)`` on the grid.

    Only nodes with ``sqrt(qf) <= region_radius`` count (all nodes by
    default); the node at ``theta0`` itself is excluded.
    """
    pts = grid.points()
    qf = _qf(vstar, theta0, pts)
    keep = qf > 1e-14 * max(1.0, qf.max())
    if region_radius is not None:
        keep &= qf <= region_radius**2
    if not np.any(keep):
        raise ValueError("no grid node in the minorant region besides theta0")
    m = _values(rate, pts[keep])
    ratio = m / qf[keep]
    j = int(np.argmin(ratio))
    a_sq = float(ratio[j])
    return MinorantReport(a_sq, float(np.sqrt(max(a_sq, 0.0))), pts[keep][j].tolist(),
                          bool(np.any(m < -1e-12 * (1 + np.abs(m).max()))), int(keep.sum()))


@dataclass
class QuadraticPenaltyReport:
    rho: float
    a: float
    a1: float
    s: float
    log_Q_s: float
    log_Q_0: float
    z_grid: list[float]
    tail_bound: list[float]
    coverage_bound: list[float]
    b_of_r: list[float]
    b_zero: float
    b_vanishes: bool
    b_within_linear: bool
    minorant_ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def quadratic_penalty_report(rho: float, a: float, a1: float, rate: Field, pen: Field, grid: GridDomain,
                             z_grid, p: int, *, vstar=None, theta0=None, tol: float = 1e-9
                             ) -> QuadraticPenaltyReport:
    """Bounds for the quadratic penalty ``a1^2 qf`` when ``M >= a^2 qf``.

    Emits ``log Q(rho, s)`` with ``s = 1 - a1^2/a^2``, the concentration bound
    ``Q(rho, s) exp(-rho s z)`` and the confidence bound ``Q(rho, 0)
    exp(-rho z)``.  The grid values of ``b(r)`` are reported next to two
    readings: ``b(r) = 0`` for every ``r`` and the weaker ``b(r) <= (1 - s) r``.
    """
    if not 0 < a1 <= a:
        raise ValueError("need 0 < a1 <= a")
    s = 1.0 - a1 * a1 / (a * a)
    minorant_ok = True
    if vstar is not None:
        rep = quadratic_minorant(rate, vstar, grid, theta0)
        minorant_ok = rep.a_sq >= a * a * (1 - 1e-9)
        if not minorant_ok:
            raise ValueError(f"quadratic minorant violated: grid a^2={rep.a_sq:.6g} < {a * a:.6g}")
    z = np.asarray(z_grid, dtype=float)
    log_q_s = bound_Q_quadratic(rho, s, a, a1, p)
    log_q_0 = bound_Q_quadratic(rho, 0.0, a, a, p)
    pts = grid.points()
    rate_vals, pen_vals = _values(rate, pts), _values(pen, pts)
    b = b_curve(z, rate_vals, pen_vals)
    b0 = float(b_curve([0.0], rate_vals, pen_vals)[0])
    return QuadraticPenaltyReport(
        rho=rho, a=a, a1=a1, s=s, log_Q_s=log_q_s, log_Q_0=log_q_0, z_grid=z.tolist(),
        tail_bound=tail_bound(z, rho * s, log_q_s).tolist(),
        coverage_bound=coverage_bound(z, rho, log_q_0).tolist(),
        b_of_r=b.tolist(), b_zero=b0,
        b_vanishes=bool(np.all(b <= tol)),
        b_within_linear=bool(np.all(b <= (1 - s) * z + tol)),
        minorant_ok=minorant_ok,
    )


# --------------------------------------------------------------------------
# root-n neighborhood
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RootNNeighborhood:
    matrix: np.ndarray
    level: float
    radii: np.ndarray
    axes: np.ndarray

    def contains(self, theta, theta0) -> np.ndarray:
        diff = np.atleast_2d(np.asarray(theta, dtype=float) - np.asarray(theta0, dtype=float))
        return np.einsum("mi,ij,mj->m", diff, self.matrix, diff) <= self.level * (1 + 1e-12)


def root_n_neighborhood(D1, r: float, n: int) -> RootNNeighborhood:
    """Ellipsoid ``(theta - theta0)' D1^2 (theta - theta0) <= r / n`` and its principal radii."""
    d = np.atleast_2d(np.asarray(D1, dtype=float))
    if r < 0 or n < 1:
        raise ValueError("need r >= 0 and n >= 1")
    vals, vecs = np.linalg.eigh(0.5 * (d + d.T))
    if np.any(np.abs(vals) <= 0):
        raise ValueError("D1 must be non-singular")
    return RootNNeighborhood(d @ d, r / n, np.sqrt(r / n) / np.abs(vals), vecs)


# --------------------------------------------------------------------------
# full report and refinement
# --------------------------------------------------------------------------


@dataclass
class ConcentrationReport:
    rho: float
    log_Q: float
    r_grid: list[float]
    z_grid: list[float]
    b_of_r: list[float]
    b_zero: float
    tail_bound_raw: list[float]
    tail_bound: list[float]
    coverage_bound_raw: list[float]
    coverage_bound: list[float]
    grid: dict
    z_of_A: dict = field(default_factory=dict)

    def consistent(self, rtol: float = 1e-12) -> bool:
        """Stored bounds agree with the arithmetic applied to stored fields."""
        t = tail_bound(np.array(self.r_grid), self.rho, self.log_Q, np.array(self.b_of_r))
        c = coverage_bound(np.array(self.z_grid), self.rho, self.log_Q, self.b_zero)
        return bool(np.allclose(t, self.tail_bound_raw, rtol=rtol) and np.allclose(c, self.coverage_bound_raw, rtol=rtol))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def concentration_report(rate: Field, pen: Field, grid: GridDomain, rho: float, log_Q: float,
                         r_grid, z_grid) -> ConcentrationReport:
    pts = grid.points()
    rate_vals, pen_vals = _values(rate, pts), _values(pen, pts)
    r = np.asarray(r_grid, dtype=float)
    z = np.asarray(z_grid, dtype=float)
    b = b_curve(r, rate_vals, pen_vals)
    b0 = float(b_curve([0.0], rate_vals, pen_vals)[0])
    traw = tail_bound(r, rho, log_Q, b)
    craw = coverage_bound(z, rho, log_Q, b0)
    return ConcentrationReport(
        rho=rho, log_Q=log_Q, r_grid=r.tolist(), z_grid=z.tolist(), b_of_r=b.tolist(), b_zero=b0,
        tail_bound_raw=np.atleast_1d(traw).tolist(), tail_bound=clamp_probability(np.atleast_1d(traw)).tolist(),
        coverage_bound_raw=np.atleast_1d(craw).tolist(),
        coverage_bound=clamp_probability(np.atleast_1d(craw)).tolist(),
        grid=grid.to_dict(),
    )


def refine_until_stable(compute: Callable[[GridDomain], float | np.ndarray], grid: GridDomain,
                        rtol: float = 0.01, atol: float = 1e-12, max_refinements: int = 4):
    """Halve the grid spacing until the computed value moves by less than ``rtol``.

    Returns ``(value, grid, history)`` for the finer grid of the accepted pair.
    """
    prev = np.asarray(compute(grid), dtype=float)
    history = [prev.tolist()]
    for _ in range(max_refinements):
        finer = grid.refined()
        cur = np.asarray(compute(finer), dtype=float)
        history.append(cur.tolist())
        both_inf = np.isinf(cur) & np.isinf(prev) & (np.sign(cur) == np.sign(prev))
        change = np.where(both_inf, 0.0, np.abs(cur - prev))
        scale = np.where(both_inf, 1.0, np.maximum(np.abs(cur), atol / rtol))
        if np.all(change <= rtol * scale):
            return cur, finer, history
        prev, grid = cur, finer
    raise RefinementError(f"grid value not stable after {max_refinements} refinements: {history}")
