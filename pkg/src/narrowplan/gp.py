"""Constant-velocity Gauss-Markov trajectory prior.

A state stacks joint positions and velocities, ``[q, dq]`` (length 2D).  A
trajectory stores N+2 states: the fixed start, N support states and the fixed
goal, spaced ``dt`` apart.  The prior is white noise on acceleration with
power spectral density ``qc``; its transition and process-noise matrices are
Kronecker products of 2x2 blocks with the D x D identity, which the code
exploits by working on ``(..., 2, D)`` views of states.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "State",
    "Trajectory",
    "GPModel",
    "build_gp",
    "transition",
    "gp_cost_grad",
    "gp_precision",
    "upsample_matrix",
    "upsample_times",
    "interpolate",
    "sample",
    "uniform_spec",
]


@dataclass(frozen=True)
class State:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        pos = np.atleast_1d(np.asarray(self.position, dtype=float))
        vel = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        if pos.shape != vel.shape or pos.ndim != 1:
            raise ValueError("position and velocity must be 1-D with equal length")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)

    @property
    def dim(self) -> int:
        return self.position.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        d = x.size // 2
        return cls(x[:d], x[d:])


@dataclass(frozen=True)
class Trajectory:
    """States ``(N+2, 2D)``: start, N support states, goal; time step ``dt``."""

    states: np.ndarray
    dt: float

    def __post_init__(self):
        x = np.array(self.states, dtype=float)
        if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] % 2:
            raise ValueError(f"trajectory states must have shape (N+2, 2D) with N >= 1, got {x.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_support(self) -> int:
        return self.states.shape[0] - 2

    @property
    def dim(self) -> int:
        return self.states.shape[1] // 2

    @property
    def start(self) -> State:
        return State.from_vector(self.states[0])

    @property
    def goal(self) -> State:
        return State.from_vector(self.states[-1])

    @property
    def support(self) -> list[State]:
        return [State.from_vector(x) for x in self.states[1:-1]]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, : self.dim]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, self.dim :]

    def flat(self) -> np.ndarray:
        """Support states as one flat vector of length N*2D."""
        return self.states[1:-1].ravel().copy()

    def with_flat(self, theta) -> "Trajectory":
        x = self.states.copy()
        x[1:-1] = np.asarray(theta, dtype=float).reshape(self.n_support, -1)
        return Trajectory(x, self.dt)

    def window(self, head: int, tail: int) -> "Trajectory":
        """Sub-trajectory over state indices ``head..tail`` (inclusive)."""
        if not 0 <= head < tail - 1 < tail <= self.states.shape[0] - 1:
            raise ValueError(f"invalid window ({head}, {tail})")
        return Trajectory(self.states[head : tail + 1], self.dt)

    def replace_window(self, head: int, sub: "Trajectory") -> "Trajectory":
        x = self.states.copy()
        x[head : head + sub.states.shape[0]] = sub.states
        return Trajectory(x, self.dt)


@dataclass(frozen=True)
class GPModel:
    qc: float
    dt: float
    mean: Trajectory

    def __post_init__(self):
        if not self.qc > 0:
            raise ValueError("qc must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def dim(self) -> int:
        return self.mean.dim

    @property
    def n_support(self) -> int:
        return self.mean.n_support

    def window(self, head: int, tail: int) -> "GPModel":
        return GPModel(self.qc, self.dt, self.mean.window(head, tail))


def build_gp(start: State, goal: State, n_support: int, total_time: float, qc: float = 1.0) -> GPModel:
    """Prior whose mean is the constant-velocity line from start to goal.

    Support states are spaced ``dt = total_time / (N+1)``.  The start and goal
    states are stored as given; pass velocities equal to
    ``(goal - start) / total_time`` for a mean with zero prior cost.
    """
    if int(n_support) < 1:
        raise ValueError("need at least one support state")
    if not total_time > 0 or not qc > 0:
        raise ValueError("total_time and qc must be positive")
    if start.dim != goal.dim:
        raise ValueError("start and goal dimensions differ")
    n = int(n_support)
    dt = total_time / (n + 1)
    s = np.linspace(0.0, 1.0, n + 2)[:, None]
    pos = (1.0 - s) * start.position + s * goal.position
    vel = np.tile((goal.position - start.position) / total_time, (n + 2, 1))
    states = np.hstack([pos, vel])
    states[0] = start.as_vector()
    states[-1] = goal.as_vector()
    return GPModel(float(qc), dt, Trajectory(states, dt))


def line_states(q_start, q_goal, total_time: float) -> tuple[State, State]:
    """Start/goal states carrying the constant line velocity."""
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    v = (q_goal - q_start) / total_time
    return State(q_start, v), State(q_goal, v)


def _phi2(tau: float) -> np.ndarray:
    return np.array([[1.0, tau], [0.0, 1.0]])


def _q2(tau: float) -> np.ndarray:
    return np.array([[tau**3 / 3.0, tau**2 / 2.0], [tau**2 / 2.0, tau]])


def _qinv2(tau: float) -> np.ndarray:
    return np.array([[12.0 / tau**3, -6.0 / tau**2], [-6.0 / tau**2, 4.0 / tau]])


def transition(gp: GPModel, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Full ``(2D, 2D)`` state transition and process-noise covariance over ``tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    eye = np.eye(gp.dim)
    return np.kron(_phi2(tau), eye), gp.qc * np.kron(_q2(tau), eye)


def _blocks(x: np.ndarray, dim: int) -> np.ndarray:
    return x.reshape(x.shape[:-1] + (2, dim))


def _check(gp: GPModel, traj: Trajectory):
    if traj.states.shape != gp.mean.states.shape:
        raise ValueError(f"trajectory shape {traj.states.shape} does not match prior {gp.mean.states.shape}")


def gp_cost_grad(gp: GPModel, traj: Trajectory, full: bool = False):
    """Prior cost in factor form and its gradient over the support states.

    With ``full=True`` the gradient covers all N+2 states (shape ``(N+2, 2D)``).
    """
    _check(gp, traj)
    d = gp.dim
    dev = _blocks(traj.states - gp.mean.states, d)  # (N+2, 2, D)
    phi, qinv = _phi2(gp.dt), _qinv2(gp.dt) / gp.qc
    err = np.einsum("ij,tjd->tid", phi, dev[:-1]) - dev[1:]  # (N+1, 2, D)
    w = np.einsum("ij,tjd->tid", qinv, err)
    cost = 0.5 * float(np.sum(err * w))
    g = np.zeros_like(dev)
    g[:-1] += np.einsum("ji,tjd->tid", phi, w)
    g[1:] -= w
    g = g.reshape(traj.states.shape)
    if full:
        return cost, g
    return cost, g[1:-1].ravel()


def gp_precision(gp: GPModel) -> np.ndarray:
    """Dense precision over all N+2 stacked states, assembled from the factors."""
    n_states = gp.mean.states.shape[0]
    phi, qinv = _phi2(gp.dt), _qinv2(gp.dt) / gp.qc
    a = phi.T @ qinv @ phi
    b = -phi.T @ qinv
    c = qinv
    p2 = np.zeros((n_states, 2, n_states, 2))
    for t in range(n_states - 1):
        p2[t, :, t, :] += a
        p2[t, :, t + 1, :] += b
        p2[t + 1, :, t, :] += b.T
        p2[t + 1, :, t + 1, :] += c
    p2 = p2.reshape(2 * n_states, 2 * n_states)
    # interleave to the [q, dq] per-state layout with joint blocks
    return np.kron(p2, np.eye(gp.dim))


def uniform_spec(n_support: int, n_ip: int) -> tuple[int, ...]:
    return (int(n_ip),) * (n_support + 1)


@lru_cache(maxsize=256)
def _interval_coeffs(dt: float, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interpolation weights and time offsets for one interval with ``n`` inner points."""
    lam = np.empty((n, 2, 2))
    psi = np.empty((n, 2, 2))
    taus = dt * np.arange(1, n + 1) / (n + 1)
    qinv_dt = _qinv2(dt)
    phi_dt = _phi2(dt)
    for s, tau in enumerate(taus):
        psi[s] = _q2(tau) @ _phi2(dt - tau).T @ qinv_dt
        lam[s] = _phi2(tau) - psi[s] @ phi_dt
    return lam, psi, taus


@dataclass(frozen=True)
class UpsamplePlan:
    """Row layout of the upsampling map: each row mixes two adjacent states."""

    left: np.ndarray
    right: np.ndarray
    lam: np.ndarray
    psi: np.ndarray
    times: np.ndarray
    support_rows: np.ndarray


@lru_cache(maxsize=4096)
def _plan(dt: float, spec: tuple[int, ...]) -> UpsamplePlan:
    left, right, lams, psis, times, support_rows = [], [], [], [], [], []
    eye, zero = np.eye(2), np.zeros((2, 2))
    row = 0
    for t, n in enumerate(spec):
        support_rows.append(row)
        left.append(t)
        right.append(t + 1)
        lams.append(eye[None])
        psis.append(zero[None])
        times.append([t * dt])
        row += 1
        if n > 0:
            lam, psi, taus = _interval_coeffs(dt, n)
            left.extend([t] * n)
            right.extend([t + 1] * n)
            lams.append(lam)
            psis.append(psi)
            times.append(t * dt + taus)
            row += n
    support_rows.append(row)
    last = len(spec)
    left.append(last)
    right.append(last)  # identity row; right weight is zero
    lams.append(eye[None])
    psis.append(zero[None])
    times.append([last * dt])
    plan = UpsamplePlan(
        np.array(left),
        np.array(right),
        np.concatenate(lams),
        np.concatenate(psis),
        np.concatenate([np.atleast_1d(t) for t in times]),
        np.array(support_rows),
    )
    return plan


def _spec_tuple(gp: GPModel, spec: Sequence[int]) -> tuple[int, ...]:
    spec = tuple(int(v) for v in spec)
    if len(spec) != gp.n_support + 1:
        raise ValueError(f"upsample spec needs {gp.n_support + 1} entries, got {len(spec)}")
    if any(v < 0 for v in spec):
        raise ValueError("upsample counts must be non-negative")
    return spec


def upsample_plan(gp: GPModel, spec: Sequence[int]) -> UpsamplePlan:
    return _plan(gp.dt, _spec_tuple(gp, spec))


def upsample_times(gp: GPModel, spec: Sequence[int]) -> np.ndarray:
    return upsample_plan(gp, spec).times.copy()


def upsample_matrix(gp: GPModel, spec: Sequence[int]) -> sp.csr_matrix:
    """Sparse map from state deviations (all N+2 states) to upsampled deviations.

    Rows at support times are identity blocks; rows inside interval ``t``
    combine states ``t`` and ``t+1`` through the GP interpolation weights.
    """
    plan = upsample_plan(gp, spec)
    d = gp.dim
    n_rows, n_states = len(plan.left), gp.mean.states.shape[0]
    eye = sp.identity(d, format="csr")
    blocks = [[None] * n_states for _ in range(n_rows)]
    for r in range(n_rows):
        blocks[r][plan.left[r]] = sp.kron(plan.lam[r], eye)
        if plan.right[r] != plan.left[r]:
            blocks[r][plan.right[r]] = sp.kron(plan.psi[r], eye)
    return sp.bmat(blocks, format="csr")


def apply_plan(plan: UpsamplePlan, dev: np.ndarray, dim: int) -> np.ndarray:
    """Upsampled deviations ``(S, 2D)`` from state deviations ``(N+2, 2D)``."""
    x = _blocks(dev, dim)
    out = np.einsum("sij,sjd->sid", plan.lam, x[plan.left]) + np.einsum("sij,sjd->sid", plan.psi, x[plan.right])
    return out.reshape(len(plan.left), 2 * dim)


def apply_plan_transpose(plan: UpsamplePlan, g_up: np.ndarray, n_states: int, dim: int) -> np.ndarray:
    """Transpose map: gradient over upsampled rows to gradient over states."""
    g = _blocks(g_up, dim)
    out = np.zeros((n_states, 2, dim))
    np.add.at(out, plan.left, np.einsum("sji,sjd->sid", plan.lam, g))
    np.add.at(out, plan.right, np.einsum("sji,sjd->sid", plan.psi, g))
    return out.reshape(n_states, 2 * dim)


def mean_upsampled(gp: GPModel, spec: Sequence[int]) -> np.ndarray:
    """The prior mean sampled at the upsampled times (constant-velocity line)."""
    plan = upsample_plan(gp, spec)
    mean = gp.mean.states
    d = gp.dim
    idx = plan.left
    offs = plan.times - idx * gp.dt
    offs[plan.support_rows] = 0.0
    out = mean[idx].copy()
    out[:, :d] += offs[:, None] * mean[idx, d:]
    return out


def interpolate(gp: GPModel, traj: Trajectory, spec: Sequence[int]) -> np.ndarray:
    """Upsampled states ``(S, 2D)`` including the fixed boundary states."""
    _check(gp, traj)
    plan = upsample_plan(gp, spec)
    up = apply_plan(plan, traj.states - gp.mean.states, gp.dim) + mean_upsampled(gp, spec)
    # support rows are exact copies of the support states
    up[plan.support_rows] = traj.states
    return up


def conditional_support(gp: GPModel, boundary: Trajectory | None = None):
    """Mean deviation and Cholesky factor of the support states given boundaries."""
    prec = gp_precision(gp)
    m = 2 * gp.dim
    n_states = gp.mean.states.shape[0]
    free = np.arange(m, (n_states - 1) * m)
    fixed = np.r_[np.arange(m), np.arange((n_states - 1) * m, n_states * m)]
    p_ff = prec[np.ix_(free, free)]
    chol = scipy.linalg.cholesky(p_ff, lower=True)
    shift = np.zeros(free.size)
    if boundary is not None:
        _check(gp, boundary)
        dev_b = (boundary.states - gp.mean.states).ravel()[fixed]
        if np.any(dev_b):
            rhs = -prec[np.ix_(free, fixed)] @ dev_b
            shift = scipy.linalg.cho_solve((chol, True), rhs)
    return shift, chol


def sample(gp: GPModel, count: int, rng: np.random.Generator, boundary: Trajectory | None = None) -> list[Trajectory]:
    """Draw trajectories from the prior with start and goal held fixed.

    Boundary states come from ``boundary`` when given, else from the mean;
    support states are drawn from the prior conditioned on them.
    """
    if int(count) < 1:
        raise ValueError("count must be >= 1")
    shift, chol = conditional_support(gp, boundary)
    base = (boundary if boundary is not None else gp.mean).states
    mean_support = gp.mean.states[1:-1].ravel() + shift
    z = rng.standard_normal((int(count), mean_support.size))
    # chol is the lower factor of the precision: x = L^-T z has covariance P^-1
    draws = scipy.linalg.solve_triangular(chol, z.T, lower=True, trans="T").T
    out = []
    for dx in draws:
        x = base.copy()
        x[1:-1] = (mean_support + dx).reshape(gp.n_support, -1)
        out.append(Trajectory(x, gp.dt))
    return out
