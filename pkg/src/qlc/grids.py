"""Rectangular search grids used for every sup/inf over a parameter box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_POINT_CAP = 2_000_000


@dataclass(frozen=True)
class GridDomain:
    """Tensor grid over a box; points enumerate in row-major (C) order."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points_per_axis: tuple[int, ...]
    cap: int = DEFAULT_POINT_CAP

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        k = np.atleast_1d(self.points_per_axis).astype(int)
        if k.size == 1 and len(lo) > 1:
            k = np.repeat(k, len(lo))
        if not (len(lo) == len(hi) == k.size >= 1):
            raise ValueError("lower, upper and points_per_axis must have equal length")
        if not all(np.isfinite(lo + hi)) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("grid box needs finite bounds with lower < upper")
        if np.any(k < 2):
            raise ValueError("grid needs at least 2 points per axis")
        if int(np.prod(k)) > self.cap:
            raise ValueError(f"grid of {int(np.prod(k))} points exceeds cap {self.cap}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "points_per_axis", tuple(int(v) for v in k))

    @classmethod
    def around(cls, center, half_width, points, cap=DEFAULT_POINT_CAP) -> GridDomain:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        w = np.broadcast_to(np.asarray(half_width, dtype=float), c.shape)
        return cls(tuple(c - w), tuple(c + w), tuple(np.broadcast_to(points, c.shape)), cap)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, k) for a, b, k in zip(self.lower, self.upper, self.points_per_axis)]

    @property
    def steps(self) -> np.ndarray:
        return np.array([(b - a) / (k - 1) for a, b, k in zip(self.lower, self.upper, self.points_per_axis)])

    def points(self) -> np.ndarray:
        """All nodes as an ``(m, p)`` array in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def cell_volumes(self) -> np.ndarray:
        """Trapezoid weights: each node owns its Voronoi cell clipped to the box."""
        w = []
        for h, k in zip(self.steps, self.points_per_axis):
            v = np.full(k, h)
            v[0] = v[-1] = h / 2
            w.append(v)
        out = w[0]
        for v in w[1:]:
            out = np.multiply.outer(out, v)
        return np.asarray(out).reshape(-1)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def refined(self) -> GridDomain:
        """Halve the spacing; every old node stays a node."""
        return GridDomain(self.lower, self.upper, tuple(2 * k - 1 for k in self.points_per_axis), self.cap)

    def contains(self, theta) -> bool:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        return bool(np.all(t >= np.array(self.lower)) and np.all(t <= np.array(self.upper)))

    def nearest_index(self, theta) -> int:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        idx = np.clip(np.rint((t - np.array(self.lower)) / self.steps), 0, np.array(self.points_per_axis) - 1)
        return int(np.ravel_multi_index(tuple(idx.astype(int)), self.points_per_axis))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "points": list(self.points_per_axis)}
