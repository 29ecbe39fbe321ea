"""Primitive obstacle scenes with exact signed distances and the CHOMP-style
piecewise collision cost."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Circle",
    "Box",
    "Scene",
    "signed_distance",
    "signed_distance_batch",
    "collision_cost",
]

DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def extent(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r), (cx + r, cy + r)

    def sdf(self, p: np.ndarray):
        rel = p - np.asarray(self.center)
        norm = np.linalg.norm(rel, axis=-1)
        safe = np.where(norm > 0.0, norm, 1.0)
        grad = np.where((norm > 0.0)[..., None], rel / safe[..., None], np.array([1.0, 0.0]))
        return norm - self.radius, grad


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its min and max corners."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        lo = (float(self.lo[0]), float(self.lo[1]))
        hi = (float(self.hi[0]), float(self.hi[1]))
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise ValueError(f"box corners must satisfy lo < hi, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def extent(self):
        return self.lo, self.hi

    def sdf(self, p: np.ndarray):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        rel = p - center
        sgn = np.where(rel >= 0.0, 1.0, -1.0)
        q = np.abs(rel) - half
        outer = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(outer, axis=-1)
        inside_d = np.max(q, axis=-1)
        axis = np.argmax(q, axis=-1)  # first axis wins ties
        in_grad = np.where((axis == 0)[..., None], [1.0, 0.0], [0.0, 1.0]) * sgn
        outside = out_norm > 0.0
        safe = np.where(outside, out_norm, 1.0)
        grad = np.where(outside[..., None], sgn * outer / safe[..., None], in_grad)
        dist = np.where(outside, out_norm, inside_d)
        return dist, grad


Obstacle = Union[Circle, Box]


@dataclass(frozen=True)
class Scene:
    obstacles: tuple[Obstacle, ...] = ()
    epsilon: float = DEFAULT_EPSILON
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((-10.0, -10.0), (10.0, 10.0))

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        obstacles = tuple(self.obstacles)
        (bx0, by0), (bx1, by1) = self.bounds
        for k, ob in enumerate(obstacles):
            (x0, y0), (x1, y1) = ob.extent()
            if x0 < bx0 or y0 < by0 or x1 > bx1 or y1 > by1:
                raise ValueError(f"obstacle {k} lies outside the workspace bounds")
        object.__setattr__(self, "obstacles", obstacles)

    def with_obstacles(self, obstacles: Sequence[Obstacle]) -> "Scene":
        return Scene(tuple(obstacles), self.epsilon, self.bounds)

    @cached_property
    def _packed(self):
        circles = [(k, ob) for k, ob in enumerate(self.obstacles) if isinstance(ob, Circle)]
        boxes = [(k, ob) for k, ob in enumerate(self.obstacles) if isinstance(ob, Box)]
        order = np.array([k for k, _ in circles] + [k for k, _ in boxes], dtype=int)
        centers = np.array([ob.center for _, ob in circles], dtype=float).reshape(-1, 2)
        radii = np.array([ob.radius for _, ob in circles], dtype=float)
        lo = np.array([ob.lo for _, ob in boxes], dtype=float).reshape(-1, 2)
        hi = np.array([ob.hi for _, ob in boxes], dtype=float).reshape(-1, 2)
        # column j of the stacked (circles, boxes) arrays is obstacle order[j]
        inv = np.argsort(order)
        return centers, radii, 0.5 * (lo + hi), 0.5 * (hi - lo), inv


def _circle_dist(p, centers, radii):
    diff = p[:, None, :] - centers[None]
    return np.sqrt(np.einsum("pkc,pkc->pk", diff, diff)) - radii


def _box_dist(p, center, half):
    q = np.abs(p[:, None, :] - center[None]) - half
    outer = np.maximum(q, 0.0)
    return np.sqrt(np.einsum("pkc,pkc->pk", outer, outer)) + np.minimum(np.maximum(q[..., 0], q[..., 1]), 0.0)


def _circle_grad(p, center):
    rel = p - center
    norm = np.linalg.norm(rel, axis=-1)
    safe = np.where(norm > 0.0, norm, 1.0)
    return np.where((norm > 0.0)[:, None], rel / safe[:, None], np.array([1.0, 0.0]))


def _box_grad(p, center, half):
    rel = p - center
    sgn = np.where(rel >= 0.0, 1.0, -1.0)
    q = np.abs(rel) - half
    outer = np.maximum(q, 0.0)
    out_norm = np.linalg.norm(outer, axis=-1)
    first = (q[:, 0] >= q[:, 1])[:, None]
    in_grad = np.where(first, [1.0, 0.0], [0.0, 1.0]) * sgn
    outside = out_norm > 0.0
    safe = np.where(outside, out_norm, 1.0)
    return np.where(outside[:, None], sgn * outer / safe[:, None], in_grad)


def signed_distance_batch(scene: Scene, points):
    """Vectorized signed distance over points ``(..., 2)``.

    Returns ``(dist, grad, ids)``; ``ids`` is -1 and ``dist`` is +inf when the
    scene is empty.  On exact ties the lowest obstacle id wins.
    """
    p = np.asarray(points, dtype=float)
    shape = p.shape[:-1]
    if not scene.obstacles:
        return np.full(shape, np.inf), np.zeros(shape + (2,)), np.full(shape, -1, dtype=int)
    flat = p.reshape(-1, 2)
    centers, radii, bc, bh, inv = scene._packed
    n_c = radii.size
    # columns reordered to obstacle ids so that argmin picks the lowest id on ties
    d_all = np.concatenate([_circle_dist(flat, centers, radii), _box_dist(flat, bc, bh)], axis=1)[:, inv]
    ids = np.argmin(d_all, axis=1)
    dist = d_all[np.arange(flat.shape[0]), ids]
    col = inv[ids]  # column in the (circles, boxes) stacking
    grad = np.empty_like(flat)
    is_c = col < n_c
    if np.any(is_c):
        grad[is_c] = _circle_grad(flat[is_c], centers[col[is_c]])
    if not np.all(is_c):
        kb = col[~is_c] - n_c
        grad[~is_c] = _box_grad(flat[~is_c], bc[kb], bh[kb])
    return dist.reshape(shape), grad.reshape(shape + (2,)), ids.reshape(shape)


def signed_distance(scene: Scene, p):
    """Signed distance from one point to the nearest obstacle surface.

    Returns ``(distance, unit_gradient, obstacle_id)`` with ``obstacle_id``
    None for an empty scene.
    """
    d, g, i = signed_distance_batch(scene, np.asarray(p, dtype=float).reshape(2))
    return float(d), g, (None if int(i) < 0 else int(i))


def collision_cost(distance, epsilon: float):
    """Piecewise hinge cost and its derivative w.r.t. distance.

    ``-d + eps/2`` inside, ``(d - eps)^2 / (2 eps)`` within the margin, zero
    beyond it.  Works elementwise on arrays.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    d = np.asarray(distance, dtype=float)
    inside = d < 0.0
    margin = (d >= 0.0) & (d <= epsilon)
    cost = np.where(inside, -d + 0.5 * epsilon, np.where(margin, (d - epsilon) ** 2 / (2.0 * epsilon), 0.0))
    dcost = np.where(inside, -1.0, np.where(margin, (d - epsilon) / epsilon, 0.0))
    if cost.ndim == 0:
        return float(cost), float(dcost)
    return cost, dcost
