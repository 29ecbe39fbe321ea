"""Incremental planning loop: BT-factors, significant-waypoint slicing and a
penalty loop that switches between AGD and STOMA on stuck detection.

Modes
-----
``isago``       optimize only the padded slices around significant waypoints.
``sago``        same loop, but every round optimizes the whole trajectory.
``agd-only``    whole trajectory, AGD only (no stuck checks).
``stoma-only``  whole trajectory, STOMA only, run until collision-free.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .agd import AgdConfig, agd_run
from .environment import Scene, signed_distance_batch
from .gp import Trajectory, build_gp, gp_cost_grad, line_states, upsample_plan, uniform_spec
from .kinematics import ArmModel, balls_fk
from .objective import ObjectiveContext, _upsampled_terms, check_stuck, obs_cost
from .stoma import StomaConfig, stoma_run

__all__ = [
    "IsagoConfig",
    "Problem",
    "BtFactors",
    "SubProblem",
    "PlanResult",
    "MODES",
    "bt_factors",
    "update_bt_factors",
    "select_significant",
    "significant_waypoints",
    "slice_subtrajectories",
    "pen_iter",
    "plan",
    "penalty_schedule",
]

logger = logging.getLogger(__name__)

MODES = ("isago", "sago", "agd-only", "stoma-only")


@dataclass(frozen=True)
class IsagoConfig:
    rho0: float = 1.25e-2
    kappa_rho: float = 0.4
    c_eta: float = 2.0
    obstol: float = 1e-4
    N_uf: int = 10
    N_rho: int = 5
    agd: AgdConfig = AgdConfig()
    stoma: StomaConfig = StomaConfig()
    verify_factor: int = 2
    time_limit: float | None = None

    def __post_init__(self):
        if not 0.0 < self.kappa_rho < 1.0:
            raise ValueError("kappa_rho must lie in (0, 1)")
        if not self.c_eta > 0:
            raise ValueError("c_eta must be positive")
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if self.N_uf < 1 or self.N_rho < 1:
            raise ValueError("N_uf and N_rho must be >= 1")


@dataclass(frozen=True)
class Problem:
    """A planning query: arm, scene, joint-space start/goal and prior settings."""

    arm: ArmModel
    scene: Scene
    q_start: np.ndarray
    q_goal: np.ndarray
    n_support: int = 12
    total_time: float = 13.0
    qc: float = 1.0
    n_ip: int = 8

    def context(self) -> ObjectiveContext:
        s, g = line_states(self.q_start, self.q_goal, self.total_time)
        gp = build_gp(s, g, self.n_support, self.total_time, self.qc)
        return ObjectiveContext(self.arm, self.scene, gp, self.n_ip)


@dataclass
class BtFactors:
    values: np.ndarray  # factor for waypoints 1..N, stored at index t-1

    @property
    def weights(self) -> np.ndarray:
        n = self.values.size
        return np.full(n, 1.0 / n)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.values)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.weights @ (self.values - self.mean) ** 2))


@dataclass(frozen=True)
class SubProblem:
    """Contiguous window ``head..tail`` of state indices; ``head`` and ``tail``
    are the fixed pads, everything strictly between them is optimized."""

    head: int
    tail: int

    @property
    def free(self) -> tuple[int, ...]:
        return tuple(range(self.head + 1, self.tail))

    @property
    def timestamps(self) -> tuple[int, ...]:
        """Support timestamps covered, pads included (global boundaries excluded)."""
        return tuple(t for t in range(self.head, self.tail + 1) if t >= 1 and t != self._n_plus_1)

    # set by slice_subtrajectories so that the goal index can be excluded
    _n_plus_1: int = field(default=-1, compare=False, repr=False)


@dataclass
class PlanResult:
    trajectory: Trajectory
    status: str  # success | failure | timeout
    obs_cost: float
    wall_time: float
    mode: str
    stuck_events: int = 0
    restarts: int = 0
    penalty_rounds: int = 0
    outer_rounds: int = 0
    agd_calls: int = 0
    stoma_calls: int = 0
    cost_trace: list[float] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == "success"


def penalty_schedule(rho0: float, kappa: float, rounds: int) -> list[float]:
    return [rho0 * kappa**r for r in range(rounds)]


def _window_parts(ctx: ObjectiveContext, traj: Trajectory, rho: float, spec=None):
    """Per-state obstacle cost, per-interval inner cost and per-interval prior cost."""
    spec = ctx.spec if spec is None else spec
    plan = upsample_plan(ctx.gp, spec)
    _, costs, _ = _upsampled_terms(ctx, traj, spec)
    row_cost = costs.sum(axis=1)
    n_states = traj.states.shape[0]
    state_cost = row_cost[plan.support_rows]
    inner = np.ones(row_cost.size, dtype=bool)
    inner[plan.support_rows] = False
    interval_cost = np.bincount(plan.left[inner], weights=row_cost[inner], minlength=n_states - 1)[: n_states - 1]
    gp_terms = _gp_factor_costs(ctx, traj)
    return state_cost, interval_cost, rho * gp_terms


def _gp_factor_costs(ctx: ObjectiveContext, traj: Trajectory) -> np.ndarray:
    from .gp import _blocks, _phi2, _qinv2

    gp = ctx.gp
    dev = _blocks(traj.states - gp.mean.states, gp.dim)
    err = np.einsum("ij,tjd->tid", _phi2(gp.dt), dev[:-1]) - dev[1:]
    w = np.einsum("ij,tjd->tid", _qinv2(gp.dt) / gp.qc, err)
    return 0.5 * np.sum(err * w, axis=(1, 2))


def bt_factors(ctx: ObjectiveContext, traj: Trajectory, rho: float) -> BtFactors:
    """Penalized cost of every three-state window ``{t-1, t, t+1}``, t = 1..N."""
    state_c, interval_c, gp_c = _window_parts(ctx, traj, rho)
    t = np.arange(1, traj.n_support + 1)
    vals = state_c[t - 1] + state_c[t] + state_c[t + 1] + interval_c[t - 1] + interval_c[t] + gp_c[t - 1] + gp_c[t]
    return BtFactors(vals)


def update_bt_factors(ctx: ObjectiveContext, traj: Trajectory, rho: float, factors: BtFactors, head: int, tail: int) -> BtFactors:
    """Refresh only the factors whose window intersects states ``head..tail``."""
    lo, hi = max(head - 1, 1), min(tail + 1, traj.n_support)
    sub_head, sub_tail = lo - 1, hi + 1
    sub_ctx = ctx.window(sub_head, sub_tail)
    local = bt_factors(sub_ctx, traj.window(sub_head, sub_tail), rho).values
    vals = factors.values.copy()
    vals[lo - 1 : hi] = local
    return BtFactors(vals)


def select_significant(f: BtFactors, c_eta: float) -> list[int]:
    """Waypoints whose factor deviates from the mean by more than ``c_eta`` std."""
    if not c_eta > 0:
        raise ValueError("c_eta must be positive")
    dev = np.abs(f.values - f.mean)
    return [int(t) + 1 for t in np.flatnonzero(dev > c_eta * f.std)]


def colliding_waypoints(ctx: ObjectiveContext, traj: Trajectory, spec=None) -> list[int]:
    """Waypoints whose window has any obstacle cost (some ball within the
    safety margin) under ``spec``."""
    state_c, interval_c, _ = _window_parts(ctx, traj, 1.0, spec)
    t = np.arange(1, traj.n_support + 1)
    obs = state_c[t - 1] + state_c[t] + state_c[t + 1] + interval_c[t - 1] + interval_c[t]
    return [int(v) for v in t[obs > 0.0]]


def significant_waypoints(ctx, traj, factors: BtFactors, cfg: IsagoConfig) -> list[int]:
    """Statistical outliers; when there are none but the whole trajectory
    still fails the verification check, every waypoint whose window touches
    the margin."""
    sel = select_significant(factors, cfg.c_eta)
    if sel:
        return sel
    spec = _verify_spec(ctx, traj, cfg.verify_factor)
    if obs_cost(ctx, traj, spec) >= cfg.obstol:
        return colliding_waypoints(ctx, traj, spec)
    return []


def slice_subtrajectories(selected: Sequence[int], n_support: int) -> list[SubProblem]:
    """Maximal runs of adjacent selected waypoints, each padded by one fixed
    neighbour per side; slices sharing a pad are merged."""
    sel = sorted(set(int(t) for t in selected))
    if any(t < 1 or t > n_support for t in sel):
        raise ValueError("selected timestamps must lie in 1..N")
    runs: list[list[int]] = []
    for t in sel:
        if runs and t == runs[-1][-1] + 1:
            runs[-1].append(t)
        else:
            runs.append([t])
    windows: list[list[int]] = []
    for run in runs:
        head, tail = run[0] - 1, run[-1] + 1
        if windows and head <= windows[-1][1]:
            windows[-1][1] = tail
        else:
            windows.append([head, tail])
    return [SubProblem(h, t, _n_plus_1=n_support + 1) for h, t in windows]


def pen_iter(
    ctx: ObjectiveContext,
    traj: Trajectory,
    sub: SubProblem,
    cfg: IsagoConfig,
    rng: np.random.Generator,
    mode: str = "isago",
    result: PlanResult | None = None,
) -> tuple[Trajectory, bool]:
    """Penalty loop on one window.  Returns the updated full trajectory and
    whether the window's obstacle cost dropped below ``obstol``; that test
    uses the same dense spec as the final verification."""
    sub_ctx = ctx.window(sub.head, sub.tail)
    sub_traj = traj.window(sub.head, sub.tail)
    agd_cfg = cfg.agd if mode != "agd-only" else replace(cfg.agd, check_stuck=False)
    rho = cfg.rho0
    met = False
    for r in range(cfg.N_rho):
        if result is not None:
            result.penalty_rounds += 1
        if mode == "stoma-only":
            use_stoma = True
        elif mode == "agd-only":
            use_stoma = False
        else:
            use_stoma = check_stuck(sub_ctx, sub_traj, cfg.stoma.phi_tol_const, cfg.obstol).is_stuck
        if use_stoma:
            exit_when = "collision-free" if mode == "stoma-only" else "unstuck"
            out = stoma_run(sub_ctx, sub_traj, None, rho, cfg.stoma, rng, exit_when=exit_when)
            sub_traj = out.trajectory
            if result is not None:
                result.stuck_events += 1
                result.stoma_calls += 1
                result.restarts += out.restarts
                result.events.append(dict(kind="stoma", head=sub.head, tail=sub.tail, rho=rho, status=out.status, steps=out.steps))
        else:
            sub_traj, status, out = agd_run(sub_ctx, sub_traj, rho, agd_cfg)
            if status == "stuck":
                # continue from where the stuck case was detected so that the
                # next round's check hands it to STOMA
                sub_traj = sub_traj.with_flat(out.stuck_theta)
            if result is not None:
                result.agd_calls += 1
                result.events.append(dict(kind="agd", head=sub.head, tail=sub.tail, rho=rho, status=status, iters=out.iterations))
        if verify(sub_ctx, sub_traj, cfg.verify_factor) < cfg.obstol:
            met = True
            break
        rho *= cfg.kappa_rho
    return traj.replace_window(sub.head, sub_traj), met


def start_goal_collisions(problem: Problem) -> tuple[bool, bool]:
    """Whether any ball at the start / goal configuration penetrates an obstacle."""
    out = []
    for q in (problem.q_start, problem.q_goal):
        x = balls_fk(problem.arm, np.asarray(q, dtype=float), jacobian=False)
        d, _, _ = signed_distance_batch(problem.scene, x)
        out.append(bool(np.any(d - problem.arm.radii < 0.0)))
    return out[0], out[1]


def _verify_spec(ctx: ObjectiveContext, traj: Trajectory, factor: int):
    return uniform_spec(traj.n_support, max(1, ctx.n_ip * factor))


def verify(ctx: ObjectiveContext, traj: Trajectory, factor: int = 2) -> float:
    """Obstacle cost under a denser uniform upsampling than the optimizer's."""
    return obs_cost(ctx, traj, _verify_spec(ctx, traj, factor))


def plan(problem: Problem, cfg: IsagoConfig = IsagoConfig(), seed=0, mode: str = "isago") -> PlanResult:
    """Plan from ``problem.q_start`` to ``problem.q_goal``.

    The initial trajectory is the straight joint-space line.  ``seed`` may be
    an int or a ``numpy.random.Generator``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    s_hit, g_hit = start_goal_collisions(problem)
    if s_hit or g_hit:
        which = "start" if s_hit else "goal"
        raise ValueError(f"{which} configuration is in collision")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t0 = time.perf_counter()
    ctx = problem.context()
    traj = ctx.gp.mean
    n = traj.n_support
    result = PlanResult(traj, "failure", float("nan"), 0.0, mode)
    factors = bt_factors(ctx, traj, cfg.rho0)
    result.cost_trace.append(float(factors.values.sum()))
    timed_out = False
    # windows whose penalty loop missed obstol are widened by one waypoint per
    # side in the next round only, so a stubborn window cannot grow into the
    # whole trajectory
    widened: set[int] = set()
    for i in range(1, cfg.N_uf + 1):
        sel = significant_waypoints(ctx, traj, factors, cfg)
        if not sel:
            break
        result.outer_rounds += 1
        sel = sorted(set(sel) | widened)
        widened = set()
        subs = slice_subtrajectories(sel, n) if mode == "isago" else [SubProblem(0, n + 1, _n_plus_1=n + 1)]
        for sub in subs:
            traj, met = pen_iter(ctx, traj, sub, cfg, rng, mode, result)
            if not met:
                widened.update(t for t in range(sub.head, sub.tail + 1) if 1 <= t <= n)
            factors = update_bt_factors(ctx, traj, cfg.rho0, factors, sub.head, sub.tail)
            if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
                timed_out = True
                break
        result.cost_trace.append(float(factors.values.sum()))
        logger.debug("outer round %d: %d slices, factor sum %.4g", i, len(subs), result.cost_trace[-1])
        if timed_out:
            break
    result.trajectory = traj
    result.obs_cost = verify(ctx, traj, cfg.verify_factor)
    result.wall_time = time.perf_counter() - t0
    if result.obs_cost < cfg.obstol:
        result.status = "success"
    else:
        result.status = "timeout" if timed_out else "failure"
    return result
