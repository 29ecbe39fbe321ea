"""Analytic obstacle+prior gradient against central differences on random
3-link problems (arc-length weights frozen, as in the optimizer)."""
import numpy as np

from narrowplan.environment import Box, Circle, Scene
from narrowplan.gp import build_gp, line_states
from narrowplan.kinematics import make_arm
from narrowplan.objective import ObjectiveContext, fd_gradient, obs_cost, total_cost_grad

rng = np.random.default_rng(0)
arm = make_arm([0.5, 0.4, 0.3])
for trial in range(5):
    obs = [Circle(tuple(rng.uniform(-1, 1, 2)), float(rng.uniform(0.05, 0.2))) for _ in range(3)]
    lo = rng.uniform(-1.0, 0.8, 2)
    obs.append(Box(tuple(lo), tuple(lo + rng.uniform(0.1, 0.3, 2))))
    start, goal = line_states(rng.uniform(-np.pi, np.pi, 3), rng.uniform(-np.pi, np.pi, 3), 7.0)
    ctx = ObjectiveContext(arm, Scene(tuple(obs), epsilon=0.1), build_gp(start, goal, 6, 7.0), 4)
    traj = ctx.gp.mean.with_flat(ctx.gp.mean.flat() + 0.3 * rng.standard_normal(ctx.gp.mean.flat().size))
    g = total_cost_grad(ctx, traj, 1.25e-2)[1]
    fd = fd_gradient(ctx, traj, 1.25e-2)
    err = np.max(np.abs(g - fd)) / np.max(np.abs(fd))
    print(f"trial {trial}: obs={obs_cost(ctx, traj):.3f} max rel err {err:.1e}")
