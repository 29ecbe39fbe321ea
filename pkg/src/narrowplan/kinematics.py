"""Planar serial-arm kinematics for collision-check balls (CCBs).

Angles are relative joint angles in radians; lengths are in meters.  All
batch functions accept joint arrays of shape ``(..., D)`` and broadcast over
the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Ccb",
    "ArmModel",
    "make_arm",
    "ball_positions",
    "ball_jacobian",
    "joint_positions",
    "balls_fk",
]


@dataclass(frozen=True)
class Ccb:
    """A collision-check ball rigidly attached to one link."""

    link_index: int
    offset_fraction: float
    radius: float

    def __post_init__(self):
        if not 0.0 <= self.offset_fraction <= 1.0:
            raise ValueError(f"offset_fraction must lie in [0, 1], got {self.offset_fraction}")
        if not self.radius > 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class ArmModel:
    link_lengths: tuple[float, ...]
    balls: tuple[Ccb, ...]
    base_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    joint_limits: np.ndarray | None = None

    # cached ball tables, filled in __post_init__
    _link: np.ndarray = field(init=False, repr=False, compare=False)
    _frac: np.ndarray = field(init=False, repr=False, compare=False)
    _radius: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.link_lengths)
        if len(lengths) < 1:
            raise ValueError("arm needs at least one link")
        if any(not v > 0.0 for v in lengths):
            raise ValueError(f"link lengths must be positive, got {lengths}")
        balls = tuple(self.balls)
        if not balls:
            raise ValueError("arm needs at least one collision-check ball")
        for b in balls:
            if not 0 <= b.link_index < len(lengths):
                raise ValueError(f"ball link index {b.link_index} out of range for {len(lengths)} links")
        limits = self.joint_limits
        if limits is None:
            limits = np.tile([-2.0 * np.pi, 2.0 * np.pi], (len(lengths), 1))
        limits = np.array(limits, dtype=float).reshape(len(lengths), 2)
        if np.any(limits[:, 0] > limits[:, 1]):
            raise ValueError("joint limits must satisfy lo <= hi")
        limits.setflags(write=False)
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "balls", balls)
        object.__setattr__(self, "base_pose", tuple(float(v) for v in self.base_pose))
        object.__setattr__(self, "joint_limits", limits)
        object.__setattr__(self, "_link", np.array([b.link_index for b in balls], dtype=int))
        object.__setattr__(self, "_frac", np.array([b.offset_fraction for b in balls], dtype=float))
        object.__setattr__(self, "_radius", np.array([b.radius for b in balls], dtype=float))

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def n_balls(self) -> int:
        return len(self.balls)

    @property
    def radii(self) -> np.ndarray:
        return self._radius

    def clamp(self, q: np.ndarray) -> np.ndarray:
        """Clip joint positions (last axis) into the joint limits."""
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])


def make_arm(
    link_lengths: Sequence[float],
    fractions: Sequence[float] = (0.0, 0.5, 1.0),
    radius: float | Sequence[float] = 0.05,
    base_pose: Sequence[float] = (0.0, 0.0, 0.0),
    joint_limits=None,
) -> ArmModel:
    """Arm with the same ball fractions on every link, ordered base to tip.

    ``radius`` may be a scalar or one value per link.
    """
    n = len(link_lengths)
    radii = np.broadcast_to(np.asarray(radius, dtype=float), (n,))
    balls = [Ccb(j, float(f), float(radii[j])) for j in range(n) for f in fractions]
    return ArmModel(tuple(link_lengths), tuple(balls), tuple(base_pose), joint_limits)


def joint_positions(arm: ArmModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Return joint origins ``(..., D+1, 2)`` and absolute link angles ``(..., D)``."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != arm.dof:
        raise ValueError(f"expected {arm.dof} joint values, got shape {q.shape}")
    x0, y0, th0 = arm.base_pose
    phi = th0 + np.cumsum(q, axis=-1)
    lengths = np.asarray(arm.link_lengths)
    steps = np.stack([np.cos(phi), np.sin(phi)], axis=-1) * lengths[:, None]
    origin = np.broadcast_to(np.array([x0, y0]), q.shape[:-1] + (1, 2))
    pts = np.concatenate([origin, origin + np.cumsum(steps, axis=-2)], axis=-2)
    return pts, phi


def balls_fk(arm: ArmModel, q, jacobian: bool = True):
    """Ball centers ``(..., B, 2)`` and, optionally, Jacobians ``(..., B, 2, D)``."""
    pts, phi = joint_positions(arm, q)
    link, frac = arm._link, arm._frac
    lengths = np.asarray(arm.link_lengths)[link]
    u = np.stack([np.cos(phi[..., link]), np.sin(phi[..., link])], axis=-1)
    x = pts[..., link, :] + (frac * lengths)[:, None] * u
    if not jacobian:
        return x
    # column j is the perpendicular of (x - p_j) for joints proximal to the ball
    rel = x[..., :, None, :] - pts[..., None, : arm.dof, :]
    jac = np.stack([-rel[..., 1], rel[..., 0]], axis=-2)
    mask = np.arange(arm.dof)[None, :] <= link[:, None]
    jac = jac * mask[:, None, :]
    return x, jac


def ball_positions(arm: ArmModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError("ball_positions expects a single joint vector")
    return balls_fk(arm, q, jacobian=False)


def ball_jacobian(arm: ArmModel, q, ball_index: int) -> np.ndarray:
    """Jacobian of one ball center w.r.t. the joints, shape ``(2, D)``.

    Columns for joints distal to the ball's link are exactly zero.
    """
    if not 0 <= ball_index < arm.n_balls:
        raise ValueError(f"ball index {ball_index} out of range [0, {arm.n_balls})")
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError("ball_jacobian expects a single joint vector")
    _, jac = balls_fk(arm, q)
    return jac[ball_index]
