"""Box-constrained damped Newton ascent with a projected-gradient fallback."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .efc import DomainError

ARMIJO = 1e-4
MAX_HALVINGS = 60
# objective changes below this many ulps of |f| are indistinguishable from rounding
NOISE_ULPS = 64


class ConvergenceError(RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, last_iterate=None, grad_norm: float | None = None):
        super().__init__(message)
        self.last_iterate = None if last_iterate is None else np.asarray(last_iterate).tolist()
        self.grad_norm = grad_norm


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    newton_steps: int = 0
    gradient_steps: int = 0
    flags: list[str] = field(default_factory=list)

    def diagnostics(self) -> dict:
        return {
            "value": float(self.value),
            "grad_norm": float(self.grad_norm),
            "iterations": self.iterations,
            "converged": self.converged,
            "newton_steps": self.newton_steps,
            "gradient_steps": self.gradient_steps,
            "flags": sorted(set(self.flags)),
        }


def projected_gradient(x, g, lower, upper) -> np.ndarray:
    """Ascent analogue of the projected gradient; zero at a box-KKT point."""
    return np.clip(x + g, lower, upper) - x


def _safe(fun, x) -> float:
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            v = float(fun(x))
    except DomainError:
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def _noise_level_step(fun, grad, x, fx, g, d, lower, upper, gnorm) -> bool:
    """Accept a full Newton step whose predicted gain is below rounding noise.

    Near the optimum the Armijo test compares numbers that differ by less
    than the floating-point resolution of ``f``; the step is then judged by
    the projected gradient norm instead.
    """
    noise = NOISE_ULPS * np.finfo(float).eps * max(1.0, abs(fx))
    if float(g @ d) > noise:
        return False
    xn = np.clip(x + d, lower, upper)
    fn = _safe(fun, xn)
    if not fn >= fx - noise:
        return False
    gn = np.linalg.norm(projected_gradient(xn, np.asarray(grad(xn), dtype=float), lower, upper))
    return bool(gn < gnorm)


def maximize_in_box(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    hess: Callable[[np.ndarray], np.ndarray],
    x0,
    lower,
    upper,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> AscentResult:
    """Maximize ``fun`` over ``[lower, upper]`` starting from ``x0``.

    Newton directions are computed on the free coordinates (those not pinned
    to a face by an outward gradient).  If the free Hessian block is not
    negative definite the step falls back to projected gradient ascent and the
    event is flagged.  Every accepted step satisfies an Armijo condition, so
    the objective never decreases beyond rounding: once the predicted gain
    drops below the resolution of ``f`` a Newton step is accepted when it
    shrinks the projected gradient.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(x0)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), np.shape(x0)).copy()
    x = np.clip(np.asarray(x0, dtype=float).copy(), lower, upper)
    fx = _safe(fun, x)
    if not np.isfinite(fx):
        raise DomainError(f"objective undefined at start point {x.tolist()}")
    res = AscentResult(x, fx, np.inf, 0, False)
    for it in range(max_iter + 1):
        g = np.asarray(grad(x), dtype=float)
        pg = projected_gradient(x, g, lower, upper)
        res.grad_norm = float(np.linalg.norm(pg))
        res.iterations = it
        if res.grad_norm <= tol:
            res.converged = True
            break
        if it == max_iter:
            break
        pinned = ((x <= lower) & (g < 0)) | ((x >= upper) & (g > 0))
        free = ~pinned
        h = np.asarray(hess(x), dtype=float)
        direction = None
        if np.any(free):
            hf = -h[np.ix_(free, free)]
            try:
                chol = np.linalg.cholesky(hf)
                step = np.linalg.solve(chol.T, np.linalg.solve(chol, g[free]))
                direction = np.zeros_like(x)
                direction[free] = step
            except np.linalg.LinAlgError:
                res.flags.append("hessian_not_negative_definite")
        moved = False
        for kind in ("newton", "gradient"):
            if kind == "newton":
                if direction is None:
                    continue
                d, t = direction, 1.0
                if _noise_level_step(fun, grad, x, fx, g, d, lower, upper, res.grad_norm):
                    xn = np.clip(x + d, lower, upper)
                    x, fx, moved = xn, _safe(fun, xn), True
                    res.newton_steps += 1
                    break
            else:
                d = np.where(free, g, 0.0)
                curvature = np.linalg.norm(h, 2)
                t = 1.0 / max(curvature, np.linalg.norm(d), 1e-12)
            for _ in range(MAX_HALVINGS):
                xn = np.clip(x + t * d, lower, upper)
                fn = _safe(fun, xn)
                if fn >= fx + ARMIJO * float(g @ (xn - x)) and np.any(xn != x):
                    break
                t *= 0.5
            else:
                continue
            if kind == "newton":
                res.newton_steps += 1
            else:
                res.gradient_steps += 1
                res.flags.append("gradient_fallback")
            x, fx, moved = xn, fn, True
            break
        if not moved:
            res.flags.append("line_search_stalled")
            g = np.asarray(grad(x), dtype=float)
            res.grad_norm = float(np.linalg.norm(projected_gradient(x, g, lower, upper)))
            res.converged = res.grad_norm <= tol
            break
    res.x, res.value = x, fx
    return res
