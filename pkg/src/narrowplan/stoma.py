"""Stochastic trajectory optimization with moment adaptation (STOMA).

Stochastic gradients are drawn at three scales per call:

* functional - the prior weight ``rho_hat = rho / u`` with ``u ~ U(u_min, 1]``;
* time - one interpolation count per interval, ``n_t ~ U{0..N_ip}``;
* space - ball gradients whose angle to the accumulated gradient exceeds a
  random ``phi_tol ~ U(lo, hi)`` degrees are dropped.

Steps mix a lag iterate and an aggregated iterate as in AGD, with the
aggregated step scaled per coordinate by bias-corrected second moments.  Each
restart round re-initializes from the cheapest of the current iterate and K
prior samples.  Random draws happen in a fixed order so that a seeded
generator reproduces a run exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .gp import GPModel, Trajectory, sample
from .objective import ObjectiveContext, StuckReport, evaluate

__all__ = [
    "StomaConfig",
    "MomentState",
    "StomaResult",
    "sample_sg",
    "update_moments",
    "step_scales",
    "stoma_run",
]

logger = logging.getLogger(__name__)

MOMENT_EPS = 1e-12


@dataclass(frozen=True)
class StomaConfig:
    delta: float = 0.40
    gamma: float = 0.90
    K: int = 12
    N_rsg: int = 5
    N_lo: int = 35
    N_up: int = 55
    SGtol: float = 6.4e-3
    phi_tol_const: float = 95.0
    phi_tol_range: tuple[float, float] = (60.0, 180.0)
    N_ip_max: int | None = None  # defaults to the context's n_ip
    obstol: float = 1e-4
    u_min: float = 0.05

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.K < 1 or self.N_rsg < 1:
            raise ValueError("K and N_rsg must be >= 1")
        if not 1 <= self.N_lo <= self.N_up:
            raise ValueError("need 1 <= N_lo <= N_up")
        lo, hi = self.phi_tol_range
        if not 0.0 < lo <= hi <= 180.0:
            raise ValueError("phi_tol_range must lie within (0, 180]")
        if not 0.0 < self.u_min <= 1.0:
            raise ValueError("u_min must lie in (0, 1]")


@dataclass(frozen=True)
class MomentState:
    raw: np.ndarray
    corrected: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n: int) -> "MomentState":
        return cls(np.zeros(n), np.zeros(n), 0)


def update_moments(ms: MomentState, sg, gamma: float) -> MomentState:
    """EMA of squared gradients with bias correction."""
    sg = np.asarray(sg, dtype=float)
    if sg.shape != ms.raw.shape:
        raise ValueError("gradient and moment shapes differ")
    k = ms.k + 1
    raw = gamma * ms.raw + (1.0 - gamma) * sg * sg
    return MomentState(raw, raw / (1.0 - gamma**k), k)


def step_scales(ms: MomentState, delta: float, alpha: float) -> tuple[np.ndarray, float]:
    """Per-coordinate aggregated step ``B`` and scalar lag step ``lam``.

    ``B = delta / 2 * M^-1/2``; ``lam`` sits at the midpoint of the admitted
    band ``[1, 1 + alpha/4] * min(B)``.
    """
    b = 0.5 * delta / np.sqrt(ms.corrected + MOMENT_EPS)
    lam = (1.0 + alpha / 8.0) * float(np.min(b))
    return b, lam


@dataclass
class SgDraw:
    rho_hat: float
    spec: tuple[int, ...]
    phi_tol: float


def draw_sg_params(ctx: ObjectiveContext, rho: float, rng: np.random.Generator, cfg: StomaConfig) -> SgDraw:
    n_ip = ctx.n_ip if cfg.N_ip_max is None else cfg.N_ip_max
    u = rng.uniform(cfg.u_min, 1.0)
    spec = tuple(int(v) for v in rng.integers(0, n_ip + 1, size=ctx.gp.n_support + 1))
    phi = float(rng.uniform(*cfg.phi_tol_range))
    return SgDraw(rho / u, spec, phi)


def sample_sg(
    ctx: ObjectiveContext,
    traj: Trajectory,
    rho: float,
    rng: np.random.Generator,
    cfg: StomaConfig = StomaConfig(),
):
    """One stochastic gradient and the stuck report at ``traj``.

    Returns ``(gradient, stuck_report, draw)``.  The stuck check uses the
    context's default upsampling and the constant ``phi_tol_const``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    grad, det, draw = _sg_and_check(ctx, traj, rho, rng, cfg)
    return grad, det.stuck, draw


def _sg_and_check(ctx, traj, rho, rng, cfg):
    draw = draw_sg_params(ctx, rho, rng, cfg)
    ev = evaluate(ctx, traj, rho, draw.spec, phi_tol=draw.phi_tol, gp_weight=draw.rho_hat)
    det = evaluate(ctx, traj, rho, stuck_tol=(cfg.phi_tol_const, cfg.obstol))
    return ev.grad, det, draw


@dataclass
class StomaResult:
    trajectory: Trajectory
    status: str  # unstuck | cap-reached | numerical-failure
    cost: float
    trace: list[dict] = field(default_factory=list)
    restarts: int = 0
    steps: int = 0
    best_costs: list[float] = field(default_factory=list)
    stuck: StuckReport | None = None


def stoma_run(
    ctx: ObjectiveContext,
    traj: Trajectory,
    gp: GPModel | None,
    rho: float,
    cfg: StomaConfig = StomaConfig(),
    rng: np.random.Generator | None = None,
    exit_when: str = "unstuck",
) -> StomaResult:
    """Drive ``traj`` out of a stuck configuration.

    Returns as soon as the stochastic iterate is no longer stuck (or, with
    ``exit_when="collision-free"``, once it is also below ``obstol``).
    Restarts are sampled from ``gp`` (default: the context prior) with the
    input's boundary states held fixed.
    """
    if exit_when not in ("unstuck", "collision-free"):
        raise ValueError(f"unknown exit_when {exit_when!r}")
    if not rho > 0:
        raise ValueError("rho must be positive")
    rng = np.random.default_rng() if rng is None else rng
    gp = ctx.gp if gp is None else gp
    d = ctx.arm.dof
    n = traj.n_support
    stuck_tol = (cfg.phi_tol_const, cfg.obstol)

    def project(theta):
        x = theta.reshape(n, 2 * d).copy()
        x[:, :d] = ctx.arm.clamp(x[:, :d])
        return x.ravel()

    def done(ev) -> bool:
        if ev.stuck.is_stuck:
            return False
        return exit_when == "unstuck" or ev.obs_cost < cfg.obstol

    start_ev = evaluate(ctx, traj, rho, stuck_tol=stuck_tol)
    best_traj, best_cost = traj, start_ev.cost
    res = StomaResult(traj, "cap-reached", start_ev.cost, stuck=start_ev.stuck)
    if done(start_ev):
        res.status = "unstuck"
        return res

    theta0 = traj.flat()
    cost0 = start_ev.cost
    for j in range(1, cfg.N_rsg + 1):
        cands = [traj.with_flat(theta0)] + sample(gp, cfg.K, rng, boundary=traj)
        costs = [cost0] + [evaluate(ctx, c, rho).cost for c in cands[1:]]
        pick = int(np.argmin(costs))
        theta = cands[pick].flat()
        theta_ag = theta.copy()
        if costs[pick] < best_cost:
            best_traj, best_cost = cands[pick], costs[pick]
        res.best_costs.append(best_cost)
        res.trace.append(dict(event="restart", round=j, pick=pick, cost=costs[pick]))
        ms = MomentState.zeros(theta.size)
        last_step = None
        k = 0
        while True:
            k += 1
            n_sg = int(rng.integers(cfg.N_lo, cfg.N_up + 1))
            alpha = 2.0 / (k + 1)
            theta_sg = (1.0 - alpha) * theta_ag + alpha * theta
            cur = traj.with_flat(theta_sg)
            sg, ev, _ = _sg_and_check(ctx, cur, rho, rng, cfg)
            res.steps += 1
            if not (np.all(np.isfinite(sg)) and np.isfinite(ev.cost)):
                res.status = "numerical-failure"
                res.trajectory, res.cost = best_traj, best_cost
                return res
            if ev.cost < best_cost:
                best_traj, best_cost = cur, ev.cost
            entry = dict(event="step", round=j, k=k, n_sg=n_sg, F=ev.cost, obs=ev.obs_cost, stuck=ev.stuck.is_stuck)
            if done(ev):
                res.trace.append(entry)
                res.status = "unstuck"
                res.trajectory, res.cost, res.stuck = cur, ev.cost, ev.stuck
                res.best_costs.append(best_cost)
                return res
            if k >= n_sg or (last_step is not None and last_step <= cfg.SGtol):
                res.trace.append(entry)
                theta0, cost0 = theta_sg, ev.cost
                break
            ms = update_moments(ms, sg, cfg.gamma)
            b, lam = step_scales(ms, cfg.delta, alpha)
            entry.update(lam=lam, b_min=float(b.min()), alpha=alpha)
            res.trace.append(entry)
            new_theta = project(theta - lam * sg)
            last_step = float(np.linalg.norm(new_theta - theta))
            theta = new_theta
            theta_ag = project(theta_sg - b * sg)
        res.restarts += 1
        logger.debug("stoma restart round %d finished after %d steps", j, k)
    res.best_costs.append(best_cost)
    res.trajectory, res.cost = best_traj, best_cost
    final = evaluate(ctx, best_traj, rho, stuck_tol=stuck_tol)
    res.stuck = final.stuck
    return res
