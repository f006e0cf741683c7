"""Random-field machinery on finite grids.

A matrix field ``H`` on a box defines the path semimetric

    D(u, v)^2 = int_0^1 (v - u)' H^2(u + t (v - u)) (v - u) dt,

its local balls ``B(eps, u) = {v : D(u, v) <= eps}``, greedy covering numbers
of those balls, and the local entropy built from them.  All suprema are taken
over grid nodes; covers are greedy and therefore upper bounds on the minimal
cover.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import eigh

from .grids import GridDomain

__all__ = [
    "RandomFieldSpec",
    "constant_field",
    "semimetric",
    "semimetric_many",
    "pairwise_semimetric",
    "ball",
    "ball_volume",
    "covering_number",
    "CoveringReport",
    "local_entropy",
    "max_local_entropy",
    "nu1_estimate",
    "LocalMaxCheck",
    "local_max_integral_check",
    "ball_ratio_constant",
    "global_bound_constants",
]

DEFAULT_PANELS = 64
BALL_RTOL = 1e-12


@dataclass(frozen=True)
class RandomFieldSpec:
    """Grid domain plus a matrix field.

    ``hfield`` maps an ``(k, p)`` array of points to ``(k, p, p)`` symmetric
    PSD matrices ``H``.  A fixed matrix may be passed instead of a callable.
    """

    domain: GridDomain
    hfield: Callable[[np.ndarray], np.ndarray] | np.ndarray = field(repr=False)
    quadrature_steps: int = DEFAULT_PANELS

    def __post_init__(self):
        if self.quadrature_steps < 1:
            raise ValueError("quadrature_steps must be >= 1")
        if not callable(self.hfield):
            h = np.atleast_2d(np.asarray(self.hfield, dtype=float))
            if h.shape != (self.domain.dim, self.domain.dim):
                raise ValueError("constant H must be p x p")
            object.__setattr__(self, "hfield", h)

    @property
    def is_constant(self) -> bool:
        return not callable(self.hfield)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def h(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.is_constant:
            return np.broadcast_to(self.hfield, (pts.shape[0], self.dim, self.dim))
        out = np.asarray(self.hfield(pts), dtype=float)
        return out.reshape(pts.shape[0], self.dim, self.dim)

    def h2(self, pts) -> np.ndarray:
        h = self.h(pts)
        return h @ h


def constant_field(domain: GridDomain, matrix) -> RandomFieldSpec:
    return RandomFieldSpec(domain, np.asarray(matrix, dtype=float))


def _check_inside(spec, pts):
    lo, hi = np.array(spec.domain.lower), np.array(spec.domain.upper)
    tol = 1e-12 * (1 + np.abs(hi - lo))
    if np.any(pts < lo - tol) or np.any(pts > hi + tol):
        raise ValueError("semimetric points must lie in the domain box")


def semimetric_many(spec: RandomFieldSpec, origin, points) -> np.ndarray:
    """``D(origin, x)`` for each row ``x`` of ``points``.

    Path integrals use the composite trapezoid rule with
    ``spec.quadrature_steps`` panels; a constant field is integrated exactly.
    """
    u = np.asarray(origin, dtype=float).reshape(1, -1)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _check_inside(spec, np.vstack([u, pts]))
    diff = pts - u
    if spec.is_constant:
        hd = diff @ spec.hfield.T
        return np.sqrt(np.sum(hd * hd, axis=1))
    steps = spec.quadrature_steps
    t = np.linspace(0.0, 1.0, steps + 1)
    w = np.full(steps + 1, 1.0 / steps)
    w[0] = w[-1] = 0.5 / steps
    nodes = u[None, :, :] + t[:, None, None] * diff[None, :, :]
    k, m, p = nodes.shape
    hn = spec.h(nodes.reshape(k * m, p))
    hd = np.einsum("nij,nj->ni", hn, np.repeat(diff[None], k, axis=0).reshape(k * m, p))
    quad = np.sum(hd * hd, axis=1).reshape(k, m)
    return np.sqrt(np.maximum(w @ quad, 0.0))


def semimetric(spec: RandomFieldSpec, u, v) -> float:
    return float(semimetric_many(spec, u, np.atleast_2d(v))[0])


def pairwise_semimetric(spec: RandomFieldSpec, pts=None) -> np.ndarray:
    """Symmetrized matrix of semimetric values between grid nodes."""
    pts = spec.domain.points() if pts is None else np.atleast_2d(pts)
    out = np.empty((pts.shape[0], pts.shape[0]))
    for i, x in enumerate(pts):
        out[i] = semimetric_many(spec, x, pts)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


def _within(dist, radius):
    return dist <= radius * (1 + BALL_RTOL)


def ball(spec: RandomFieldSpec, eps: float, center_index: int, pts=None) -> np.ndarray:
    """Indices of grid nodes in ``B(eps, center)``."""
    pts = spec.domain.points() if pts is None else pts
    d = semimetric_many(spec, pts[center_index], pts)
    return np.flatnonzero(_within(d, eps))


def ball_volume(spec: RandomFieldSpec, eps: float, center_index: int) -> float:
    """Cell-volume measure of ``B(eps, center)``."""
    idx = ball(spec, eps, center_index)
    return float(spec.domain.cell_volumes()[idx].sum())


# --------------------------------------------------------------------------
# covering numbers and local entropy
# --------------------------------------------------------------------------


def _greedy_cover(dist: np.ndarray, radius: float) -> int:
    """Farthest-point cover of all rows of ``dist``, seeded at row 0.

    Ties in the farthest distance are broken by the lowest index, up to a
    relative tolerance, so the count is reproducible across platforms.
    """
    m = dist.shape[0]
    gap = dist[0].copy()
    count = 1
    while True:
        far = gap.max()
        if _within(far, radius):
            return count
        j = int(np.flatnonzero(gap >= far * (1 - BALL_RTOL))[0])
        gap = np.minimum(gap, dist[j])
        count += 1
        if count > m:
            raise RuntimeError("greedy cover failed to terminate")


def _ball_distances(spec, eps, center_index):
    pts = spec.domain.points()
    idx = ball(spec, eps, center_index, pts)
    # put the center first so the greedy cover is seeded there
    idx = np.concatenate([[center_index], idx[idx != center_index]])
    return idx, pairwise_semimetric(spec, pts[idx])


def covering_number(spec: RandomFieldSpec, eps0: float, eps: float, center_index: int) -> int:
    """Greedy number of ``eps0``-balls (grid-centered) covering ``B(eps, center)``.

    The count is an upper bound on the minimal cover.
    """
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    _, dist = _ball_distances(spec, eps, center_index)
    return _greedy_cover(dist, eps0)


@dataclass(frozen=True)
class CoveringReport:
    center: list[float]
    eps: float
    counts: list[int]
    levels: int
    ball_points: int
    entropy: float
    greedy_upper_bound: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def local_entropy(spec: RandomFieldSpec, eps: float, center_index: int,
                  max_levels: int = 60) -> CoveringReport:
    """``sum_k 2^-k log N(2^-k eps, eps, center)`` from greedy covers.

    Once the count reaches the number ``m`` of grid nodes in the ball it can
    no longer grow, and the remaining tail ``sum_{j>K} 2^-j log m`` equals
    ``2^-K log m``; it is added in closed form.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    idx, dist = _ball_distances(spec, eps, center_index)
    m = idx.size
    counts, total = [], 0.0
    for k in range(1, max_levels + 1):
        n_k = _greedy_cover(dist, eps * 2.0**-k)
        counts.append(n_k)
        total += 2.0**-k * np.log(n_k)
        if n_k == m:
            total += 2.0**-k * np.log(m)
            break
    else:
        total += 2.0**-max_levels * np.log(m)
    center = spec.domain.points()[center_index].tolist()
    return CoveringReport(center, float(eps), counts, len(counts), int(m), float(total))


def max_local_entropy(spec: RandomFieldSpec, eps: float, centers=None) -> tuple[float, CoveringReport]:
    """``Q*``: largest local entropy over ``centers`` (all nodes by default)."""
    centers = range(spec.domain.size) if centers is None else centers
    best = None
    for c in centers:
        rep = local_entropy(spec, eps, int(c))
        if best is None or rep.entropy > best.entropy:
            best = rep
    return best.entropy, best


# --------------------------------------------------------------------------
# continuity constants and the local-maxima lemma
# --------------------------------------------------------------------------


def nu1_estimate(spec: RandomFieldSpec, eps: float) -> float:
    """Largest ``g' H^2(u) g / g' H^2(v) g`` over node pairs with ``D(u, v) <= eps``.

    The supremum over directions is the top generalized eigenvalue, so no
    direction sampling is needed.  Returns ``inf`` if some ``H^2(v)`` is
    singular in a direction where ``H^2(u)`` is not.
    """
    if spec.is_constant:
        return 1.0
    pts = spec.domain.points()
    h2 = spec.h2(pts)
    best = 1.0
    for j, v in enumerate(pts):
        near = np.flatnonzero(_within(semimetric_many(spec, v, pts), eps))
        b = h2[j]
        bvals, bvecs = np.linalg.eigh(b)
        if bvals[0] <= 1e-14 * max(bvals[-1], 1e-300):
            for i in near:
                if i != j and np.linalg.norm(h2[i] - b) > 0:
                    return np.inf
            continue
        for i in near:
            if i != j:
                best = max(best, float(eigh(h2[i], b, eigvals_only=True)[-1]))
    return best


def ball_ratio_constant(spec: RandomFieldSpec, eps: float) -> float:
    """Grid analogue of ``sup pi(B(eps,u)) / pi(B(eps,v))`` over ``D(u, v) <= eps``."""
    dist = pairwise_semimetric(spec)
    member = _within(dist, eps)
    vol = member.astype(float) @ spec.domain.cell_volumes()
    ratio = np.where(member, vol[:, None] / vol[None, :], 0.0)
    return float(max(1.0, ratio.max()))


@dataclass(frozen=True)
class LocalMaxCheck:
    lhs: float
    rhs: float
    nu: float
    holds: bool


def local_max_integral_check(f, spec: RandomFieldSpec, eps: float, nu: float | None = None,
                             dist: np.ndarray | None = None) -> LocalMaxCheck:
    """Compare ``sup f`` with ``nu * int f*(u) / pi(B(eps,u)) dpi(u)``.

    ``f*`` is the local sup over ``B(eps, u)`` and ``pi`` the cell-volume
    measure.  Without ``nu`` the constant is ``max(nu1**p, grid ball ratio)``:
    on a finite box balls near the boundary are clipped, and the clipped ratio
    can exceed ``nu1**p``.
    """
    vals = np.asarray(f, dtype=float).reshape(-1)
    if vals.size != spec.domain.size or np.any(vals < 0):
        raise ValueError("f must be a nonnegative value per grid node")
    dist = pairwise_semimetric(spec) if dist is None else dist
    member = _within(dist, eps)
    w = spec.domain.cell_volumes()
    vol = member.astype(float) @ w
    if nu is None:
        ratio = np.where(member, vol[:, None] / vol[None, :], 0.0).max()
        nu = max(nu1_estimate(spec, eps) ** spec.dim, float(ratio), 1.0)
    lhs = float(vals.max())
    # compare on the scale of max f so that tiny values do not underflow
    scale = lhs if lhs > 0 else 1.0
    fstar = np.where(member, vals[None, :] / scale, 0.0).max(axis=1)
    rhs_scaled = float(nu * np.sum(w * fstar / vol))
    holds = lhs == 0 or 1.0 <= rhs_scaled * (1 + 1e-12)
    return LocalMaxCheck(lhs, rhs_scaled * scale, float(nu), bool(holds))


def global_bound_constants(rho: float, eps: float, q_star: float, nu: float, h_eps: float) -> float:
    """``2 eps^2 rho^2/(1-rho) + (1-rho) Q* + log nu + H_eps`` for the penalized field."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if nu < 1:
        raise ValueError("nu must be >= 1")
    return 2 * eps**2 * rho**2 / (1 - rho) + (1 - rho) * q_star + np.log(nu) + h_eps
