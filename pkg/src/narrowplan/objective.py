"""Penalized trajectory objective: weighted GP prior plus obstacle functional.

The obstacle functional sums ``c(d) * ||x_dot||`` over every collision-check
ball at every upsampled state.  Its gradient treats the arc-length weight
``||x_dot||`` as frozen at the current iterate, so only ball positions are
differentiated.  Per-ball joint gradients are accumulated from the base ball
to the tip ball; a ball whose gradient makes an angle larger than ``phi_tol``
with the running sum can be rejected, which is how the space-scale stochastic
gradient and the stuck check are built.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .environment import Scene, collision_cost, signed_distance_batch
from .gp import (
    GPModel,
    Trajectory,
    apply_plan_transpose,
    gp_cost_grad,
    interpolate,
    uniform_spec,
    upsample_plan,
)
from .kinematics import ArmModel, balls_fk

__all__ = [
    "ObjectiveContext",
    "BallGradientReport",
    "StuckReport",
    "Evaluation",
    "obs_cost",
    "obs_grad",
    "ball_gradients",
    "total_cost_grad",
    "check_stuck",
    "evaluate",
    "frozen_cost",
    "fd_gradient",
    "included_angles",
    "accumulate_with_rejection",
]

V_MIN = 1e-3
ANGLE_EPS = 1e-12
DEFAULT_N_IP = 8


@dataclass(frozen=True)
class ObjectiveContext:
    arm: ArmModel
    scene: Scene
    gp: GPModel
    n_ip: int = DEFAULT_N_IP
    v_min: float = V_MIN

    def __post_init__(self):
        if self.gp.dim != self.arm.dof:
            raise ValueError(f"prior dimension {self.gp.dim} != arm dof {self.arm.dof}")
        if self.n_ip < 0:
            raise ValueError("n_ip must be non-negative")

    @property
    def spec(self) -> tuple[int, ...]:
        return uniform_spec(self.gp.n_support, self.n_ip)

    def window(self, head: int, tail: int) -> "ObjectiveContext":
        return replace(self, gp=self.gp.window(head, tail))


@dataclass
class BallGradientReport:
    """Per (row, ball) joint gradients, prefix sums and included angles.

    ``angles`` holds NaN where the angle is undefined (either vector ~ 0).
    Prefix ``k`` sums balls ``0..k`` in arm order without rejection.
    """

    gradients: np.ndarray  # (S, B, D)
    prefix: np.ndarray  # (S, B, D)
    angles: np.ndarray  # (S, B) degrees


@dataclass
class StuckReport:
    is_stuck: bool
    offending: list[tuple[int, int]] = field(default_factory=list)
    max_angle: float = 0.0
    obs_cost: float = 0.0

    def __bool__(self):
        return self.is_stuck


@dataclass
class Evaluation:
    """One pass over the objective at a trajectory."""

    cost: float
    grad: np.ndarray
    gp_cost: float
    obs_cost: float
    stuck: StuckReport | None = None
    ball_costs: np.ndarray | None = None  # unweighted c(x), kept on request
    weights: np.ndarray | None = None  # arc-length weights, kept on request


def included_angles(vectors: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Angle in degrees between matching rows; NaN when either norm is ~0."""
    dot = np.sum(vectors * reference, axis=-1)
    n1 = np.linalg.norm(vectors, axis=-1)
    n2 = np.linalg.norm(reference, axis=-1)
    ok = (n1 > ANGLE_EPS) & (n2 > ANGLE_EPS)
    cos = np.where(ok, dot / np.where(ok, n1 * n2, 1.0), 1.0)
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.where(ok, ang, np.nan)


def accumulate_with_rejection(ball_grads: np.ndarray, phi_tol: float) -> np.ndarray:
    """Sum per-ball gradients base to tip, dropping balls whose angle to the
    running sum exceeds ``phi_tol`` degrees.  ``ball_grads`` is ``(S, B, D)``."""
    if phi_tol >= 180.0:
        return ball_grads.sum(axis=1)
    acc = np.zeros(ball_grads.shape[::2])
    for i in range(ball_grads.shape[1]):
        gi = ball_grads[:, i]
        ang = included_angles(gi, acc)
        keep = ~(ang > phi_tol)  # NaN angles are kept
        acc = acc + np.where(keep[:, None], gi, 0.0)
    return acc


def _arc_weights(ctx: ObjectiveContext, jac: np.ndarray, dq: np.ndarray) -> np.ndarray:
    xdot = np.einsum("sbkd,sd->sbk", jac, dq)
    return np.maximum(np.linalg.norm(xdot, axis=-1), ctx.v_min)


def _ball_terms(
    ctx: ObjectiveContext,
    q: np.ndarray,
    dq: np.ndarray | None,
    weight: np.ndarray | None = None,
    parts: bool = False,
):
    """Costs ``(S, B)`` and joint gradients ``(S, B, D)`` of every ball.

    ``weight`` overrides the arc-length weights computed from ``dq``.  With
    ``parts`` the unweighted costs and the weights are returned as well.
    """
    x, jac = balls_fk(ctx.arm, q)
    if weight is None:
        weight = np.ones(x.shape[:-1]) if dq is None else _arc_weights(ctx, jac, dq)
    dist, normal, _ = signed_distance_batch(ctx.scene, x)
    c, dc = collision_cost(dist - ctx.arm.radii, ctx.scene.epsilon)
    c = np.asarray(c).reshape(weight.shape)
    dc = np.asarray(dc).reshape(weight.shape)
    grads = np.einsum("sbkd,sbk->sbd", jac, normal) * (weight * dc)[..., None]
    if parts:
        return c * weight, grads, c, weight
    return c * weight, grads


def _upsampled_terms(ctx: ObjectiveContext, traj: Trajectory, spec, parts: bool = False):
    up = interpolate(ctx.gp, traj, spec)
    d = ctx.arm.dof
    out = _ball_terms(ctx, up[:, :d], up[:, d:], parts=parts)
    return (up,) + tuple(out)


def _obs_grad_from_rows(ctx: ObjectiveContext, plan, row_grads: np.ndarray, n_states: int, full: bool):
    g_up = np.zeros((row_grads.shape[0], 2 * ctx.arm.dof))
    g_up[:, : ctx.arm.dof] = row_grads
    g = apply_plan_transpose(plan, g_up, n_states, ctx.arm.dof)
    return g if full else g[1:-1].ravel()


def obs_cost(ctx: ObjectiveContext, traj: Trajectory, spec: Sequence[int] | None = None) -> float:
    spec = ctx.spec if spec is None else spec
    _, costs, _ = _upsampled_terms(ctx, traj, spec)
    return float(costs.sum())


def frozen_cost(
    ctx: ObjectiveContext,
    traj: Trajectory,
    ref: Trajectory,
    rho: float,
    spec: Sequence[int] | None = None,
) -> float:
    """``rho * F_gp(traj)`` plus the obstacle cost of ``traj`` with arc-length
    weights frozen at ``ref``.  Its gradient at ``traj = ref`` is exactly the
    frozen-weight gradient, which makes it the consistent model for
    first-order tests."""
    spec = ctx.spec if spec is None else spec
    d = ctx.arm.dof
    up_ref = interpolate(ctx.gp, ref, spec)
    _, jac = balls_fk(ctx.arm, up_ref[:, :d])
    w = _arc_weights(ctx, jac, up_ref[:, d:])
    up = interpolate(ctx.gp, traj, spec)
    costs, _ = _ball_terms(ctx, up[:, :d], None, weight=w)
    gp_c, _ = gp_cost_grad(ctx.gp, traj)
    return rho * gp_c + float(costs.sum())


def fd_gradient(
    ctx: ObjectiveContext,
    traj: Trajectory,
    rho: float,
    h: float = 1e-6,
    spec: Sequence[int] | None = None,
) -> np.ndarray:
    """Central differences of the frozen-weight cost over the support states."""
    theta = traj.flat()
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        hi = frozen_cost(ctx, traj.with_flat(theta + e), traj, rho, spec)
        lo = frozen_cost(ctx, traj.with_flat(theta - e), traj, rho, spec)
        out[i] = (hi - lo) / (2.0 * h)
    return out


def obs_grad(
    ctx: ObjectiveContext,
    traj: Trajectory,
    spec: Sequence[int] | None = None,
    phi_tol: float = 180.0,
    full: bool = False,
) -> np.ndarray:
    """Obstacle gradient over the support states (frozen arc-length weights)."""
    if not 0.0 < phi_tol <= 180.0:
        raise ValueError("phi_tol must lie in (0, 180]")
    spec = ctx.spec if spec is None else spec
    _, _, grads = _upsampled_terms(ctx, traj, spec)
    rows = accumulate_with_rejection(grads, phi_tol)
    plan = upsample_plan(ctx.gp, spec)
    return _obs_grad_from_rows(ctx, plan, rows, traj.states.shape[0], full)


def _report(grads: np.ndarray) -> BallGradientReport:
    prefix = np.cumsum(grads, axis=1)
    prev = np.concatenate([np.zeros_like(prefix[:, :1]), prefix[:, :-1]], axis=1)
    return BallGradientReport(grads, prefix, included_angles(grads, prev))


def ball_gradients(ctx: ObjectiveContext, q, dq=None) -> BallGradientReport:
    """Per-ball obstacle gradients at one configuration or a stack of them.

    Without ``dq`` every ball's arc-length weight is 1.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q2 = q[None] if single else q
    dq2 = None if dq is None else np.asarray(dq, dtype=float).reshape(q2.shape)
    _, grads = _ball_terms(ctx, q2, dq2)
    rep = _report(grads)
    if single:
        return BallGradientReport(rep.gradients[0], rep.prefix[0], rep.angles[0])
    return rep


def total_cost_grad(ctx: ObjectiveContext, traj: Trajectory, rho: float, spec: Sequence[int] | None = None):
    """Penalized cost ``rho * F_gp + F_obs`` and its support gradient."""
    ev = evaluate(ctx, traj, rho, spec)
    return ev.cost, ev.grad


def _stuck_from(grads: np.ndarray, obs: float, phi_tol_const: float, obs_tol: float, rows: slice) -> StuckReport:
    rep = _report(grads[rows])
    ang = rep.angles
    finite = np.nan_to_num(ang, nan=-1.0)
    max_angle = float(finite.max()) if finite.size else 0.0
    if obs <= obs_tol:
        return StuckReport(False, [], max(max_angle, 0.0), obs)
    offset = rows.start or 0
    hits = np.argwhere(finite > phi_tol_const)
    pairs = [(int(r) + offset, int(b)) for r, b in hits]
    return StuckReport(bool(pairs), pairs, max(max_angle, 0.0), obs)


def check_stuck(
    ctx: ObjectiveContext,
    traj: Trajectory,
    phi_tol_const: float = 95.0,
    obs_tol: float = 1e-4,
    spec: Sequence[int] | None = None,
) -> StuckReport:
    """Stuck when obstacle cost exceeds ``obs_tol`` and some ball gradient
    opposes the accumulated gradient of the balls before it by more than
    ``phi_tol_const`` degrees.  The fixed boundary states are not scanned."""
    if not 0.0 < phi_tol_const < 180.0:
        raise ValueError("phi_tol_const must lie in (0, 180)")
    spec = ctx.spec if spec is None else spec
    _, costs, grads = _upsampled_terms(ctx, traj, spec)
    return _stuck_from(grads, float(costs.sum()), phi_tol_const, obs_tol, slice(1, grads.shape[0] - 1))


def evaluate(
    ctx: ObjectiveContext,
    traj: Trajectory,
    rho: float,
    spec: Sequence[int] | None = None,
    phi_tol: float = 180.0,
    stuck_tol: tuple[float, float] | None = None,
    gp_weight: float | None = None,
    keep_parts: bool = False,
) -> Evaluation:
    """Cost, gradient and (optionally) stuck report in a single pass.

    ``gp_weight`` overrides ``rho`` on the gradient only (stochastic
    functional scale); ``stuck_tol`` is ``(phi_tol_const, obs_tol)``.
    ``keep_parts`` stores per-ball unweighted costs and arc-length weights.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    spec = ctx.spec if spec is None else spec
    gp_c, gp_g = gp_cost_grad(ctx.gp, traj)
    _, costs, grads, raw, weights = _upsampled_terms(ctx, traj, spec, parts=True)
    obs = float(costs.sum())
    plan = upsample_plan(ctx.gp, spec)
    rows = accumulate_with_rejection(grads, phi_tol)
    g_obs = _obs_grad_from_rows(ctx, plan, rows, traj.states.shape[0], full=False)
    w = rho if gp_weight is None else gp_weight
    stuck = None
    if stuck_tol is not None:
        stuck = _stuck_from(grads, obs, stuck_tol[0], stuck_tol[1], slice(1, grads.shape[0] - 1))
    ev = Evaluation(rho * gp_c + obs, w * gp_g + g_obs, gp_c, obs, stuck)
    if keep_parts:
        ev.ball_costs, ev.weights = raw, weights
    return ev
