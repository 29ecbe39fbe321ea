"""Plan one bundled desk task in every mode and render the isago result.

    python3 demos/plan_desk_task.py [TASK] [SEED]
"""
import sys
from pathlib import Path

from narrowplan.cli import bundled_scene, load_scene, render_svg
from narrowplan.isago import MODES, plan

task_id = sys.argv[1] if len(sys.argv) > 1 else "C1"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

scene, arm, tasks = load_scene(bundled_scene())
task = next(t for t in tasks if t.id == task_id)
problem = task.problem(scene, arm)

results = {}
for mode in MODES:
    res = plan(problem, seed=seed, mode=mode)
    results[mode] = res
    print(f"{mode:>10}: {res.status:8s} obs={res.obs_cost:.2e} time={res.wall_time:.2f}s "
          f"rounds={res.outer_rounds} stuck={res.stuck_events} agd={res.agd_calls} stoma={res.stoma_calls}")

print("wrote", render_svg(problem, results["isago"].trajectory, Path(f"{task_id}_isago.svg")))
