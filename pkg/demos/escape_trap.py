"""Opposition trap: AGD stalls, STOMA's stochastic gradients get out.

A 2-link arm sweeps between two discs on opposite sides of its path, so the
elbow and tip balls are pushed in opposite joint directions.
"""
import numpy as np

from narrowplan.agd import AgdConfig, agd_run
from narrowplan.environment import Circle, Scene
from narrowplan.gp import build_gp, line_states
from narrowplan.kinematics import make_arm
from narrowplan.objective import ObjectiveContext, check_stuck
from narrowplan.stoma import StomaConfig, stoma_run

RHO = 1.25e-2

arm = make_arm([0.5, 0.5], fractions=(0.25, 0.5, 0.75, 1.0), radius=0.04)
a = 0.12
scene = Scene(
    (Circle((0.3 * np.cos(a), 0.3 * np.sin(a)), 0.06), Circle((0.9 * np.cos(a), -0.9 * np.sin(a)), 0.06)),
    epsilon=0.05,
)
start, goal = line_states([-1.2, 0.0], [1.2, 0.0], 13.0)
ctx = ObjectiveContext(arm, scene, build_gp(start, goal, 12, 13.0, 1.0))

rep = check_stuck(ctx, ctx.gp.mean)
print(f"straight line: obs={rep.obs_cost:.3f} stuck={rep.is_stuck} max angle={rep.max_angle:.0f} deg")

for seed in range(5):
    rng = np.random.default_rng(seed)
    mean = ctx.gp.mean
    traj = mean.with_flat(mean.flat() + 1e-3 * rng.standard_normal(mean.flat().size))
    _, status, agd = agd_run(ctx, traj, RHO, AgdConfig())
    sto = stoma_run(ctx, traj, None, RHO, StomaConfig(), rng)
    print(f"seed {seed}: agd {status} after {agd.iterations} it | "
          f"stoma {sto.status} after {sto.steps} steps, {sto.restarts} restarts, "
          f"stuck now {check_stuck(ctx, sto.trajectory).is_stuck}")
