"""Accelerated gradient descent with Lipschitz-estimate restarts.

Three sequences are kept: the lag iterate ``theta``, the aggregated iterate
``theta_ag`` and the interpolated point ``theta_md`` where gradients are taken.
The Lipschitz estimate starts at ``delta0 * ||grad F(theta_0)||`` and is
multiplied by ``kappa_L`` whenever the local quadratic-model test fails; the
iterate then restarts from the previous middle point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gp import Trajectory
from .objective import ObjectiveContext, StuckReport, evaluate, frozen_cost

__all__ = ["AgdConfig", "AgdResult", "agd_minimize", "agd_run", "agd_step_sizes"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgdConfig:
    delta0: float = 1.0
    kappa_L: float = 6.67
    N_L: int = 10
    N_ag: int = 50
    Ftol: float = 8e-4
    theta_tol: float = 1e-3
    obstol: float = 1e-4
    phi_tol_const: float = 95.0
    check_stuck: bool = True

    def __post_init__(self):
        if not self.kappa_L > 1:
            raise ValueError("kappa_L must exceed 1")
        if not (self.Ftol > 0 and self.theta_tol > 0 and self.obstol > 0 and self.delta0 > 0):
            raise ValueError("tolerances and delta0 must be positive")
        if self.N_L < 1 or self.N_ag < 1:
            raise ValueError("iteration caps must be >= 1")


def agd_step_sizes(k: int, L: float) -> tuple[float, float, float]:
    """``(alpha_k, beta_k, lambda_k)`` for iteration ``k >= 1``."""
    alpha = 2.0 / (k + 1)
    beta = 1.0 / (2.0 * L)
    return alpha, beta, k * beta / 2.0


@dataclass
class AgdResult:
    theta: np.ndarray
    cost: float
    status: str  # converged | stuck | iteration-cap | numerical-failure
    trace: list[dict] = field(default_factory=list)
    restarts: int = 0
    grad_evals: int = 0
    iterations: int = 0
    stuck: StuckReport | None = None
    L: float = 0.0
    stuck_theta: np.ndarray | None = None


# fun(theta) -> (cost, grad, stuck_report_or_None)
Objective = Callable[[np.ndarray], tuple]


def _finite(*xs) -> bool:
    return all(np.all(np.isfinite(x)) for x in xs)


def agd_minimize(
    fun: Objective,
    theta0: np.ndarray,
    cfg: AgdConfig = AgdConfig(),
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    model: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> AgdResult:
    """Run the restarted AGD loop on a flat parameter vector.

    Returns the lowest-cost lag or middle iterate seen, so the result never
    costs more than the input.  On a stuck exit the iterate where the stuck
    case was detected is kept in ``stuck_theta``.  ``project`` (e.g. joint-limit clamping) is applied to
    every new lag and aggregated iterate.  ``model(theta, ref)`` is the cost
    whose gradient ``fun`` actually returns, linearized around ``ref``; the
    restart test uses it in place of ``F(theta_k)`` when given.
    """
    proj = project or (lambda v: v)
    th0 = np.array(theta0, dtype=float)
    f0, g0, stuck0 = fun(th0)
    res = AgdResult(th0.copy(), float(f0), "iteration-cap", grad_evals=1)
    if not _finite(f0, g0):
        res.status = "numerical-failure"
        return res
    L = cfg.delta0 * float(np.linalg.norm(g0))
    if L <= 0.0:
        res.status = "converged"
        res.iterations = 1
        res.trace.append(dict(round=1, k=1, F=float(f0), gnorm=0.0, L=0.0, dtheta=0.0))
        return res

    best_theta, best_f = th0.copy(), float(f0)
    theta_prev, ag_prev = th0.copy(), th0.copy()
    f_prev = float(f0)
    md_hist, g_hist = [th0.copy()], [g0]  # index k-1 -> theta_md_{k-1}, grad there
    g_md1 = g0
    for j in range(1, cfg.N_L + 1):
        restarted = False
        for k in range(1, cfg.N_ag + 1):
            res.iterations += 1
            alpha, beta, lam = agd_step_sizes(k, L)
            theta_md = (1.0 - alpha) * ag_prev + alpha * theta_prev
            if k >= 2:
                f_md, g_md, _ = fun(theta_md)
                res.grad_evals += 1
                if f_md < best_f and _finite(f_md, g_md):
                    best_theta, best_f = theta_md.copy(), float(f_md)
            else:
                g_md = g_md1
            theta_k = proj(theta_prev - lam * g_md)
            ag_k = proj(theta_md - beta * g_md)
            f_k, _, stuck = fun(theta_k)
            if not _finite(f_k, theta_k, g_md):
                res.status = "numerical-failure"
                break
            step = theta_k - theta_prev
            dnorm = float(np.linalg.norm(step))
            res.trace.append(
                dict(round=j, k=k, F=float(f_k), gnorm=float(np.linalg.norm(g_md)), L=L, dtheta=dnorm)
            )
            if f_k < best_f:
                best_theta, best_f = theta_k.copy(), float(f_k)
            if k >= 2 and abs(f_k - f_prev) < cfg.Ftol and dnorm < cfg.theta_tol:
                res.status = "converged"
                break
            if cfg.check_stuck and stuck is not None and stuck.is_stuck:
                res.status = "stuck"
                res.stuck = stuck
                res.stuck_theta = theta_k.copy()
                break
            f_model = f_k if model is None else model(theta_k, theta_prev)
            model_gap = abs(f_model - f_prev - float(g_md @ step))
            if model_gap > 0.5 * L * dnorm**2:
                restart_md, restart_g = md_hist[k - 1], g_hist[k - 1]
                theta_prev, ag_prev = restart_md.copy(), restart_md.copy()
                f_prev, _, _ = fun(theta_prev)
                g_md1 = restart_g
                md_hist, g_hist = [restart_md], [restart_g]
                L *= cfg.kappa_L
                res.restarts += 1
                restarted = True
                logger.debug("agd restart %d: L=%.3g", res.restarts, L)
                break
            md_hist.append(theta_md)
            g_hist.append(g_md)
            theta_prev, ag_prev, f_prev = theta_k, ag_k, float(f_k)
        if res.status != "iteration-cap" or not restarted:
            break
    res.theta, res.cost, res.L = best_theta, best_f, L
    return res


def agd_run(
    ctx: ObjectiveContext,
    traj: Trajectory,
    rho: float,
    cfg: AgdConfig = AgdConfig(),
    spec=None,
):
    """Optimize the support states of ``traj`` with AGD.

    Returns ``(trajectory, status, result)``; the trajectory keeps the input's
    boundary states.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    stuck_tol = (cfg.phi_tol_const, cfg.obstol) if cfg.check_stuck else None
    d = ctx.arm.dof
    n = traj.n_support

    # the restart test needs F(theta_k) with arc-length weights frozen at
    # theta_{k-1}; both points are evaluated anyway, so keep their parts
    cache: dict[bytes, tuple[float, np.ndarray, np.ndarray]] = {}

    def fun(theta):
        ev = evaluate(ctx, traj.with_flat(theta), rho, spec, stuck_tol=stuck_tol, keep_parts=True)
        if len(cache) >= 6:
            cache.pop(next(iter(cache)))
        cache[theta.tobytes()] = (ev.gp_cost, ev.ball_costs, ev.weights)
        return ev.cost, ev.grad, ev.stuck

    def project(theta):
        x = theta.reshape(n, 2 * d).copy()
        x[:, :d] = ctx.arm.clamp(x[:, :d])
        return x.ravel()

    def model(theta, ref):
        here, there = cache.get(theta.tobytes()), cache.get(ref.tobytes())
        if here is None or there is None:
            return frozen_cost(ctx, traj.with_flat(theta), traj.with_flat(ref), rho, spec)
        return rho * here[0] + float(np.sum(here[1] * there[2]))

    res = agd_minimize(fun, traj.flat(), cfg, project, model)
    return traj.with_flat(res.theta), res.status, res
