"""Command-line front end: scene files, planning runs, benchmarks, gradient
checks, the (delta, gamma) tuning grid and SVG rendering.

Scene file format (YAML, ``format_version: 1``; meters, radians, seconds)::

    format_version: 1
    arm:
      link_lengths: [0.5, 0.4, 0.3]
      ball_fractions: [0.25, 0.5, 0.75, 1.0]   # per link, base to tip
      ball_radius: 0.04
      base_pose: [0.0, 0.0, 0.0]               # optional
      joint_limits: [[-3.1, 3.1], ...]         # optional, one pair per joint
    scene:
      epsilon: 0.08                            # safety margin of the cost
      bounds: [[-2, -2], [2, 2]]               # optional
      obstacles:
        - {type: box, lo: [0.6, 0.17], hi: [1.1, 0.21]}
        - {type: circle, center: [-0.45, 0.6], radius: 0.08}
    planner:                                   # optional defaults
      n_support: 12
      total_time: 13.0
      qc: 1.0
      n_ip: 8
    tasks:
      - id: C1
        class: C                               # optional, derived if absent
        start: [-0.94, 0.6, 0.74]
        goal: [0.89, -0.48, -0.88]
        repeats: 5                             # optional
        overrides: {total_time: 10.0}          # optional planner keys

Unknown keys are rejected.  Errors name the offending field and its line.

Benchmark seeds: run ``(task, mode, repeat)`` under base seed ``b`` uses the
first 8 bytes (little endian) of ``sha256("b|task|mode|repeat")``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .environment import Box, Circle, Scene, collision_cost, signed_distance_batch
from .gp import Trajectory, interpolate
from .isago import MODES, IsagoConfig, PlanResult, Problem, plan
from .kinematics import ArmModel, balls_fk, joint_positions, make_arm
from .objective import evaluate, fd_gradient
from .stoma import StomaConfig

__all__ = [
    "SceneError",
    "TaskSpec",
    "BenchRecord",
    "CSV_COLUMNS",
    "load_scene",
    "bundled_scene",
    "derive_class",
    "run_seed",
    "cmd_plan",
    "cmd_bench",
    "cmd_gradcheck",
    "cmd_tune",
    "render_svg",
    "main",
]

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CSV_COLUMNS = ("task", "class", "mode", "seed", "success", "time_s", "obs_cost", "stuck_events", "restarts")
PLANNER_KEYS = ("n_support", "total_time", "qc", "n_ip")
PLANNER_DEFAULTS = {"n_support": 12, "total_time": 13.0, "qc": 1.0, "n_ip": 8}
CLASS_LIMITS = (("A", 8), ("B", 15))  # in-collision CCB counts; above -> C
GRADCHECK_TOL = 1e-4
FD_STEP = 1e-6

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class SceneError(ValueError):
    """Scene file validation error carrying the field path and line number."""

    def __init__(self, message: str, field: str = "", line: int | None = None, source: str = ""):
        loc = source
        if line is not None:
            loc = f"{loc}:{line}" if loc else f"line {line}"
        parts = [p for p in (loc, field) if p]
        super().__init__(": ".join(parts + [message]))
        self.field = field
        self.line = line


# ---------------------------------------------------------------- scene files


@dataclass
class TaskSpec:
    id: str
    label: str
    start: np.ndarray
    goal: np.ndarray
    repeats: int = 5
    planner: dict = field(default_factory=dict)
    derived_label: str = ""
    collisions: int = 0
    start_in_collision: bool = False
    goal_in_collision: bool = False

    @property
    def feasible(self) -> bool:
        return not (self.start_in_collision or self.goal_in_collision)

    def problem(self, scene: Scene, arm: ArmModel) -> Problem:
        p = self.planner
        return Problem(
            arm,
            scene,
            np.asarray(self.start, dtype=float),
            np.asarray(self.goal, dtype=float),
            int(p["n_support"]),
            float(p["total_time"]),
            float(p["qc"]),
            int(p["n_ip"]),
        )


class _Doc:
    """Plain data plus a line lookup keyed by field path."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise SceneError(f"cannot parse: {getattr(exc, 'problem', exc)}", line=line, source=source) from None
        if node is None:
            raise SceneError("empty document", source=source)
        self.lines: dict[str, int] = {}
        self.data = self._walk(node, "")

    def _walk(self, node, path: str):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = str(k.value)
                sub = f"{path}.{key}" if path else key
                self.lines[sub] = k.start_mark.line + 1
                out[key] = self._walk(v, sub)
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self._walk(v, f"{path}[{i}]") for i, v in enumerate(node.value)]
        return yaml.SafeLoader(io.StringIO("")).construct_object(node)

    def error(self, path: str, message: str) -> SceneError:
        line = self.lines.get(path)
        probe = path
        while line is None and probe:
            probe = probe.rsplit(".", 1)[0] if "." in probe else ""
            line = self.lines.get(probe)
        return SceneError(message, field=path, line=line, source=self.source)


def _keys(doc: _Doc, obj, path: str, required: Sequence[str], optional: Sequence[str] = ()) -> dict:
    if not isinstance(obj, dict):
        raise doc.error(path, "expected a mapping")
    for k in obj:
        if k not in required and k not in optional:
            raise doc.error(f"{path}.{k}" if path else k, "unknown field")
    for k in required:
        if k not in obj:
            raise doc.error(path, f"missing field '{k}'")
    return obj


def _number(doc: _Doc, v, path: str, positive: bool = False, minimum: float | None = None) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise doc.error(path, "expected a finite number")
    if positive and not v > 0:
        raise doc.error(path, f"must be positive, got {v}")
    if minimum is not None and v < minimum:
        raise doc.error(path, f"must be >= {minimum}, got {v}")
    return float(v)


def _integer(doc: _Doc, v, path: str, minimum: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise doc.error(path, f"expected an integer >= {minimum}")
    return int(v)


def _vector(doc: _Doc, v, path: str, size: int | None = None) -> list[float]:
    if not isinstance(v, list):
        raise doc.error(path, "expected a list of numbers")
    if size is not None and len(v) != size:
        raise doc.error(path, f"expected {size} values, got {len(v)}")
    return [_number(doc, x, f"{path}[{i}]") for i, x in enumerate(v)]


def _arm(doc: _Doc, obj) -> ArmModel:
    a = _keys(doc, obj, "arm", ("link_lengths", "ball_fractions", "ball_radius"), ("base_pose", "joint_limits"))
    if not isinstance(a["link_lengths"], list) or not a["link_lengths"]:
        raise doc.error("arm.link_lengths", "expected a non-empty list")
    lengths = [_number(doc, x, f"arm.link_lengths[{i}]", positive=True) for i, x in enumerate(a["link_lengths"])]
    fracs = _vector(doc, a["ball_fractions"], "arm.ball_fractions")
    if not fracs:
        raise doc.error("arm.ball_fractions", "expected at least one fraction")
    for i, f in enumerate(fracs):
        if not 0.0 <= f <= 1.0:
            raise doc.error(f"arm.ball_fractions[{i}]", "must lie in [0, 1]")
    radius = _number(doc, a["ball_radius"], "arm.ball_radius", positive=True)
    base = _vector(doc, a.get("base_pose", [0.0, 0.0, 0.0]), "arm.base_pose", 3)
    limits = None
    if "joint_limits" in a:
        lim = a["joint_limits"]
        if not isinstance(lim, list) or len(lim) != len(lengths):
            raise doc.error("arm.joint_limits", f"expected {len(lengths)} [lo, hi] pairs")
        limits = [_vector(doc, p, f"arm.joint_limits[{i}]", 2) for i, p in enumerate(lim)]
        for i, (lo, hi) in enumerate(limits):
            if not lo < hi:
                raise doc.error(f"arm.joint_limits[{i}]", "lower limit must be below upper limit")
    try:
        return make_arm(lengths, tuple(fracs), radius, tuple(base), limits)
    except ValueError as exc:
        raise doc.error("arm", str(exc)) from None


def _scene(doc: _Doc, obj) -> Scene:
    s = _keys(doc, obj, "scene", ("obstacles",), ("epsilon", "bounds"))
    eps = _number(doc, s.get("epsilon", 0.1), "scene.epsilon", positive=True)
    bounds = ((-10.0, -10.0), (10.0, 10.0))
    if "bounds" in s:
        b = s["bounds"]
        if not isinstance(b, list) or len(b) != 2:
            raise doc.error("scene.bounds", "expected [[xmin, ymin], [xmax, ymax]]")
        lo = _vector(doc, b[0], "scene.bounds[0]", 2)
        hi = _vector(doc, b[1], "scene.bounds[1]", 2)
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise doc.error("scene.bounds", "max corner must exceed min corner")
        bounds = (tuple(lo), tuple(hi))
    if not isinstance(s["obstacles"], list):
        raise doc.error("scene.obstacles", "expected a list")
    obstacles = []
    for i, ob in enumerate(s["obstacles"]):
        path = f"scene.obstacles[{i}]"
        if not isinstance(ob, dict) or "type" not in ob:
            raise doc.error(path, "expected a mapping with a 'type'")
        kind = ob["type"]
        try:
            if kind == "circle":
                _keys(doc, ob, path, ("type", "center", "radius"))
                obstacles.append(
                    Circle(tuple(_vector(doc, ob["center"], f"{path}.center", 2)), _number(doc, ob["radius"], f"{path}.radius", positive=True))
                )
            elif kind == "box":
                _keys(doc, ob, path, ("type", "lo", "hi"))
                obstacles.append(Box(tuple(_vector(doc, ob["lo"], f"{path}.lo", 2)), tuple(_vector(doc, ob["hi"], f"{path}.hi", 2))))
            else:
                raise doc.error(f"{path}.type", f"unknown obstacle type {kind!r} (circle or box)")
        except SceneError:
            raise
        except ValueError as exc:
            raise doc.error(path, str(exc)) from None
    try:
        return Scene(tuple(obstacles), eps, bounds)
    except ValueError as exc:
        raise doc.error("scene.obstacles", str(exc)) from None


def _planner(doc: _Doc, obj, path: str, base: dict) -> dict:
    p = _keys(doc, obj, path, (), PLANNER_KEYS)
    out = dict(base)
    for k, v in p.items():
        if k in ("n_support",):
            out[k] = _integer(doc, v, f"{path}.{k}", 1)
        elif k == "n_ip":
            out[k] = _integer(doc, v, f"{path}.{k}", 0)
        else:
            out[k] = _number(doc, v, f"{path}.{k}", positive=True)
    return out


def collision_count(problem: Problem) -> int:
    """Penetrating CCBs (signed clearance < 0) over the support states of the
    straight-line initial trajectory."""
    traj = problem.context().gp.mean
    x = balls_fk(problem.arm, traj.positions[1:-1], jacobian=False)
    d, _, _ = signed_distance_batch(problem.scene, x)
    return int(np.sum(d - problem.arm.radii < 0.0))


def derive_class(count: int) -> str:
    for label, limit in CLASS_LIMITS:
        if count <= limit:
            return label
    return "C"


def _in_collision(arm: ArmModel, scene: Scene, q) -> bool:
    x = balls_fk(arm, np.asarray(q, dtype=float), jacobian=False)
    d, _, _ = signed_distance_batch(scene, x)
    return bool(np.any(d - arm.radii < 0.0))


def load_scene_text(text: str, source: str = "<string>") -> tuple[Scene, ArmModel, list[TaskSpec]]:
    doc = _Doc(text, source)
    root = _keys(doc, doc.data, "", ("format_version", "arm", "scene", "tasks"), ("planner",))
    version = root["format_version"]
    if version != FORMAT_VERSION:
        raise doc.error("format_version", f"unsupported version {version!r} (expected {FORMAT_VERSION})")
    arm = _arm(doc, root["arm"])
    scene = _scene(doc, root["scene"])
    defaults = _planner(doc, root.get("planner", {}), "planner", PLANNER_DEFAULTS)
    if not isinstance(root["tasks"], list) or not root["tasks"]:
        raise doc.error("tasks", "expected a non-empty list")
    tasks: list[TaskSpec] = []
    seen = set()
    for i, t in enumerate(root["tasks"]):
        path = f"tasks[{i}]"
        _keys(doc, t, path, ("id", "start", "goal"), ("class", "repeats", "overrides"))
        tid = str(t["id"])
        if tid in seen:
            raise doc.error(f"{path}.id", f"duplicate task id {tid!r}")
        seen.add(tid)
        start = np.array(_vector(doc, t["start"], f"{path}.start", arm.dof))
        goal = np.array(_vector(doc, t["goal"], f"{path}.goal", arm.dof))
        planner = _planner(doc, t.get("overrides", {}), f"{path}.overrides", defaults)
        repeats = _integer(doc, t.get("repeats", 5), f"{path}.repeats", 1)
        spec = TaskSpec(tid, "", start, goal, repeats, planner)
        spec.start_in_collision = _in_collision(arm, scene, start)
        spec.goal_in_collision = _in_collision(arm, scene, goal)
        spec.collisions = collision_count(spec.problem(scene, arm))
        spec.derived_label = derive_class(spec.collisions)
        label = t.get("class", spec.derived_label)
        if label not in ("A", "B", "C"):
            raise doc.error(f"{path}.class", "class must be A, B or C")
        spec.label = label
        if not spec.feasible:
            logger.warning("task %s: %s configuration is in collision", tid, "start" if spec.start_in_collision else "goal")
        tasks.append(spec)
    return scene, arm, tasks


def load_scene(path) -> tuple[Scene, ArmModel, list[TaskSpec]]:
    """Parse and validate a scene file.  Raises :class:`SceneError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SceneError(f"cannot read file: {exc.strerror}", source=str(path)) from None
    return load_scene_text(text, str(path))


def bundled_scene() -> Path:
    """Path of the bundled bookshelf-gap suite."""
    return Path(str(resources.files("narrowplan") / "data" / "bookshelf.yaml"))


def _task(tasks: list[TaskSpec], tid: str) -> TaskSpec:
    for t in tasks:
        if t.id == tid:
            return t
    raise KeyError(f"unknown task {tid!r}; available: {', '.join(t.id for t in tasks)}")


# ------------------------------------------------------------------ planning


def run_seed(base_seed: int, task_id: str, mode: str, repeat: int) -> int:
    digest = hashlib.sha256(f"{base_seed}|{task_id}|{mode}|{repeat}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_config(delta: float | None = None, gamma: float | None = None) -> IsagoConfig:
    stoma = StomaConfig()
    if delta is not None:
        stoma = replace(stoma, delta=float(delta))
    if gamma is not None:
        stoma = replace(stoma, gamma=float(gamma))
    return IsagoConfig(stoma=stoma)


@dataclass
class BenchRecord:
    task: str
    label: str
    mode: str
    seed: int
    success: bool
    time_s: float
    obs_cost: float
    stuck_events: int
    restarts: int

    def row(self, timing: bool = True) -> list[str]:
        t = f"{self.time_s:.4f}" if timing else "nan"
        return [
            self.task,
            self.label,
            self.mode,
            str(self.seed),
            "1" if self.success else "0",
            t,
            f"{self.obs_cost:.6e}",
            str(self.stuck_events),
            str(self.restarts),
        ]


def _run_job(job) -> BenchRecord:
    task, scene, arm, mode, seed, cfg = job
    res = plan(task.problem(scene, arm), cfg, seed, mode)
    return BenchRecord(task.id, task.label, mode, seed, res.success, res.wall_time, res.obs_cost, res.stuck_events, res.restarts)


def _workers() -> int:
    raw = os.environ.get("NARROWPLAN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring NARROWPLAN_THREADS=%r", raw)
        return 1


def run_jobs(jobs: list) -> list[BenchRecord]:
    """Run planning jobs, in parallel when NARROWPLAN_THREADS > 1; results keep job order."""
    n = min(_workers(), len(jobs)) if jobs else 1
    if n <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_job, jobs))


def summarize(records: Sequence[BenchRecord]) -> list[dict]:
    """Scr/Avt/Sdt per (mode, class); Avt and Sdt over successful runs."""
    groups: dict[tuple[str, str], list[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.mode, r.label), []).append(r)
    out = []
    for (mode, label), rs in groups.items():
        ok = [r.time_s for r in rs if r.success]
        out.append(
            dict(
                mode=mode,
                label=label,
                runs=len(rs),
                successes=len(ok),
                scr=len(ok) / len(rs),
                avt=float(np.mean(ok)) if ok else float("nan"),
                sdt=float(np.std(ok)) if ok else float("nan"),
            )
        )
    return out


def write_bench_csv(path, records: Sequence[BenchRecord], timing: bool = True) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row(timing))
    buf.write("\n")
    w.writerow(["# summary", "class", "runs", "successes", "Scr", "Avt", "Sdt"])
    for s in summarize(records):
        avt = f"{s['avt']:.4f}" if timing else "nan"
        sdt = f"{s['sdt']:.4f}" if timing else "nan"
        w.writerow([s["mode"], s["label"], s["runs"], s["successes"], f"{s['scr']:.4f}", avt, sdt])
    Path(path).write_text(buf.getvalue())


def read_bench_csv(path) -> list[dict]:
    """Records section of a bench CSV as dicts (summary block skipped)."""
    lines = Path(path).read_text().split("\n\n", 1)[0]
    return list(csv.DictReader(io.StringIO(lines)))


def bench_records(
    scene: Scene,
    arm: ArmModel,
    tasks: Sequence[TaskSpec],
    modes: Sequence[str],
    repeats: int | None,
    base_seed: int,
    cfg: IsagoConfig = IsagoConfig(),
) -> list[BenchRecord]:
    jobs = []
    for t in tasks:
        if not t.feasible:
            logger.warning("skipping task %s: boundary configuration in collision", t.id)
            continue
        for mode in modes:
            for rep in range(repeats if repeats is not None else t.repeats):
                jobs.append((t, scene, arm, mode, run_seed(base_seed, t.id, mode, rep), cfg))
    return run_jobs(jobs)


# ----------------------------------------------------------------- commands


def _trajectory_rows(result: PlanResult, total_time: float) -> list[list[str]]:
    traj = result.trajectory
    d = traj.dim
    rows = []
    for i, s in enumerate(traj.states):
        rows.append([str(i), f"{i * traj.dt:.6f}"] + [f"{v:.10g}" for v in s[:d]] + [f"{v:.10g}" for v in s[d:]])
    return rows


def cmd_plan(scene_path, task_id: str, mode: str, seed: int, out_dir, svg: bool = True, delta=None, gamma=None) -> int:
    try:
        scene, arm, tasks = load_scene(scene_path)
        task = _task(tasks, task_id)
    except (SceneError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if mode not in MODES:
        print(f"error: unknown mode {mode!r}", file=sys.stderr)
        return EXIT_USAGE
    problem = task.problem(scene, arm)
    try:
        res = plan(problem, make_config(delta, gamma), int(seed), mode)
    except ValueError as exc:
        print(f"error: task {task_id}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        record = dict(
            task=task.id,
            label=task.label,
            mode=mode,
            seed=int(seed),
            status=res.status,
            success=res.success,
            time_s=res.wall_time,
            obs_cost=res.obs_cost,
            stuck_events=res.stuck_events,
            restarts=res.restarts,
            penalty_rounds=res.penalty_rounds,
            outer_rounds=res.outer_rounds,
            cost_trace=res.cost_trace,
        )
        (out / f"{task.id}_{mode}_result.json").write_text(json.dumps(record, indent=2) + "\n")
        d = arm.dof
        header = ["index", "t"] + [f"q{j}" for j in range(d)] + [f"dq{j}" for j in range(d)]
        with open(out / f"{task.id}_{mode}_trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(_trajectory_rows(res, problem.total_time))
        if svg:
            render_svg(problem, res.trajectory, out / f"{task.id}_{mode}.svg")
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{task.id} {mode} seed={seed}: {res.status} obs={res.obs_cost:.3e} time={res.wall_time:.2f}s")
    return EXIT_OK if res.success else EXIT_FAIL


def cmd_bench(scene_path, modes: Sequence[str], repeats: int | None, base_seed: int, out_csv, timing: bool = True, task_ids=None) -> int:
    try:
        scene, arm, tasks = load_scene(scene_path)
        if task_ids:
            tasks = [_task(tasks, t) for t in task_ids]
    except (SceneError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    bad = [m for m in modes if m not in MODES]
    if bad:
        print(f"error: unknown mode(s) {', '.join(bad)}", file=sys.stderr)
        return EXIT_USAGE
    records = bench_records(scene, arm, tasks, modes, repeats, base_seed)
    try:
        write_bench_csv(out_csv, records, timing)
    except OSError as exc:
        print(f"error: cannot write {out_csv}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for s in summarize(records):
        print(f"{s['mode']:>10} {s['label']}: Scr={100 * s['scr']:.1f}% Avt={s['avt']:.2f}s Sdt={s['sdt']:.2f}s")
    return EXIT_OK


def random_trajectory(problem: Problem, rng: np.random.Generator, scale: float = 0.3) -> Trajectory:
    traj = problem.context().gp.mean
    return traj.with_flat(traj.flat() + scale * rng.standard_normal(traj.flat().size))


def gradient_errors(scene: Scene, arm: ArmModel, tasks: Sequence[TaskSpec], trials: int, seed: int, rho: float = 1.25e-2) -> list[float]:
    """Relative error ``max|g - g_fd| / max|g_fd|`` for random perturbations of
    each task's initial trajectory (tasks are cycled)."""
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(trials):
        problem = tasks[i % len(tasks)].problem(scene, arm)
        ctx = problem.context()
        traj = random_trajectory(problem, rng)
        g = evaluate(ctx, traj, rho).grad
        g_fd = fd_gradient(ctx, traj, rho, FD_STEP)
        errs.append(float(np.max(np.abs(g - g_fd)) / max(np.max(np.abs(g_fd)), 1e-12)))
    return errs


def cmd_gradcheck(scene_path, trials: int, seed: int) -> int:
    try:
        scene, arm, tasks = load_scene(scene_path)
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    errs = gradient_errors(scene, arm, tasks, int(trials), int(seed))
    worst = max(errs)
    print(f"gradcheck: {len(errs)} trials, max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_FAIL


def tune_grid(scene, arm, tasks, deltas, gammas, repeats, base_seed: int = 0) -> list[dict]:
    """Success rate and timing of ``isago`` for every (delta, gamma) pair.

    Seeds depend on task and repeat only, so grid cells are paired."""
    rows = []
    for delta in deltas:
        for gamma in gammas:
            cfg = make_config(delta, gamma)
            jobs = []
            for t in tasks:
                if not t.feasible:
                    continue
                for rep in range(repeats if repeats is not None else t.repeats):
                    jobs.append((t, scene, arm, "isago", run_seed(base_seed, t.id, "isago", rep), cfg))
            recs = run_jobs(jobs)
            ok = [r.time_s for r in recs if r.success]
            rows.append(
                dict(
                    delta=float(delta),
                    gamma=float(gamma),
                    runs=len(recs),
                    successes=len(ok),
                    scr=len(ok) / len(recs) if recs else float("nan"),
                    avt=float(np.mean(ok)) if ok else float("nan"),
                    sdt=float(np.std(ok)) if ok else float("nan"),
                    records=recs,
                )
            )
    return rows


def cmd_tune(scene_path, deltas: Sequence[float], gammas: Sequence[float], repeats: int | None, out_csv, base_seed: int = 0) -> int:
    try:
        scene, arm, tasks = load_scene(scene_path)
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        deltas = [float(d) for d in deltas]
        gammas = [float(g) for g in gammas]
        for g in gammas:
            StomaConfig(gamma=g)
        for d in deltas:
            StomaConfig(delta=d)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows = tune_grid(scene, arm, tasks, deltas, gammas, repeats, base_seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta", "gamma", "runs", "successes", "Scr", "Avt", "Sdt"])
    for r in rows:
        w.writerow([f"{r['delta']:g}", f"{r['gamma']:g}", r["runs"], r["successes"], f"{r['scr']:.4f}", f"{r['avt']:.4f}", f"{r['sdt']:.4f}"])
    try:
        Path(out_csv).write_text(buf.getvalue())
    except OSError as exc:
        print(f"error: cannot write {out_csv}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(buf.getvalue(), end="")
    return EXIT_OK


# ---------------------------------------------------------------- rendering


def _svg_shape(ob) -> str:
    if isinstance(ob, Circle):
        return f'<circle cx="{ob.center[0]:.4f}" cy="{ob.center[1]:.4f}" r="{ob.radius:.4f}" fill="#555" />'
    (x0, y0), (x1, y1) = ob.lo, ob.hi
    return f'<rect x="{x0:.4f}" y="{y0:.4f}" width="{x1 - x0:.4f}" height="{y1 - y0:.4f}" fill="#555" />'


def render_svg(problem: Problem, trajectory: Trajectory, path) -> Path:
    """Obstacles, the arm at every state of ``trajectory`` and its collision
    balls: red when penetrating, orange inside the safety margin, green clear."""
    arm, scene = problem.arm, problem.scene
    (bx0, by0), (bx1, by1) = scene.bounds
    q = trajectory.positions
    pts, _ = joint_positions(arm, q)
    balls = balls_fk(arm, q, jacobian=False)
    d, _, _ = signed_distance_batch(scene, balls)
    clearance = d - arm.radii
    cost, _ = collision_cost(clearance, scene.epsilon)
    reach = float(sum(arm.link_lengths)) + float(arm.radii.max())
    x0, y0 = arm.base_pose[0] - reach, arm.base_pose[1] - reach
    if scene.obstacles:
        exts = np.array([np.r_[ob.extent()[0], ob.extent()[1]] for ob in scene.obstacles])
        x0, y0 = min(x0, exts[:, 0].min()), min(y0, exts[:, 1].min())
        x1 = max(arm.base_pose[0] + reach, exts[:, 2].max())
        y1 = max(arm.base_pose[1] + reach, exts[:, 3].max())
    else:
        x1, y1 = arm.base_pose[0] + reach, arm.base_pose[1] + reach
    x0, y0, x1, y1 = max(x0, bx0), max(y0, by0), min(x1, bx1), min(y1, by1)
    pad = 0.05 * max(x1 - x0, y1 - y0)
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    w, h = x1 - x0, y1 - y0
    scale = 600.0 / max(w, h)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale:.0f}" height="{h * scale:.0f}" '
        f'viewBox="{x0:.4f} {-y1:.4f} {w:.4f} {h:.4f}">',
        f'<g transform="scale(1,-1)" stroke-width="{0.004 * max(w, h):.4f}">',
        f'<rect x="{x0:.4f}" y="{y0:.4f}" width="{w:.4f}" height="{h:.4f}" fill="white" />',
    ]
    out += [_svg_shape(ob) for ob in scene.obstacles]
    n = q.shape[0]
    for s in range(n):
        shade = 0.15 + 0.7 * s / max(n - 1, 1)
        color = f"rgb({int(40 + 150 * shade)},{int(60 + 80 * shade)},{int(200 - 120 * shade)})"
        line = " ".join(f"{x:.4f},{y:.4f}" for x, y in pts[s])
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" />')
        for b in range(balls.shape[1]):
            if clearance[s, b] < 0.0:
                fill = "#d62728"
            elif cost[s, b] > 0.0:
                fill = "#ff7f0e"
            else:
                fill = "#2ca02c"
            cx, cy = balls[s, b]
            out.append(f'<circle cx="{cx:.4f}" cy="{cy:.4f}" r="{arm.radii[b]:.4f}" fill="{fill}" fill-opacity="0.35" stroke="none" />')
    out += ["</g>", "</svg>", ""]
    path = Path(path)
    path.write_text("\n".join(out))
    return path


def _read_trajectory(path, dim: int, dt: float) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    states = np.array([[float(r[f"q{j}"]) for j in range(dim)] + [float(r[f"dq{j}"]) for j in range(dim)] for r in rows])
    return Trajectory(states, dt)


def cmd_render(scene_path, task_id: str, out_svg, traj_path=None) -> int:
    try:
        scene, arm, tasks = load_scene(scene_path)
        task = _task(tasks, task_id)
    except (SceneError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    problem = task.problem(scene, arm)
    traj = problem.context().gp.mean
    try:
        if traj_path is not None:
            traj = _read_trajectory(traj_path, arm.dof, traj.dt)
        render_svg(problem, traj, out_svg)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {out_svg}")
    return EXIT_OK


# ---------------------------------------------------------------------- main


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="narrowplan", description="Planar-arm trajectory optimization benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scene_arg(sp):
        sp.add_argument("--scene", default=None, help="scene file (default: bundled bookshelf suite)")

    sp = sub.add_parser("plan", help="plan one task")
    scene_arg(sp)
    sp.add_argument("--task", required=True)
    sp.add_argument("--mode", default="isago", choices=MODES)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out")
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--no-svg", action="store_true")

    sp = sub.add_parser("bench", help="run every task in several modes")
    scene_arg(sp)
    sp.add_argument("--mode", action="append", choices=MODES, help="repeatable; default: all modes")
    sp.add_argument("--task", action="append", help="repeatable; default: all tasks")
    sp.add_argument("--repeats", type=int, default=None, help="default: per-task value")
    sp.add_argument("--seed", type=int, default=0, help="base seed")
    sp.add_argument("--out", default="bench.csv")
    sp.add_argument("--timing", choices=("wall", "off"), default="wall", help="'off' writes nan times for byte-stable output")

    sp = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    scene_arg(sp)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("tune", help="(delta, gamma) grid")
    scene_arg(sp)
    sp.add_argument("--delta", type=_floats, default=[0.04, 0.4, 4.0])
    sp.add_argument("--gamma", type=_floats, default=[0.5, 0.9, 0.99])
    sp.add_argument("--repeats", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="tune.csv")

    sp = sub.add_parser("render", help="render a task's initial or planned trajectory to SVG")
    scene_arg(sp)
    sp.add_argument("--task", required=True)
    sp.add_argument("--traj", default=None, help="trajectory CSV written by 'plan'")
    sp.add_argument("--out", default="trajectory.svg")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    scene = args.scene or bundled_scene()
    if args.command == "plan":
        return cmd_plan(scene, args.task, args.mode, args.seed, args.out, not args.no_svg, args.delta, args.gamma)
    if args.command == "bench":
        return cmd_bench(scene, args.mode or list(MODES), args.repeats, args.seed, args.out, args.timing == "wall", args.task)
    if args.command == "gradcheck":
        return cmd_gradcheck(scene, args.trials, args.seed)
    if args.command == "tune":
        return cmd_tune(scene, args.delta, args.gamma, args.repeats, args.out, args.seed)
    if args.command == "render":
        return cmd_render(scene, args.task, args.out, args.traj)
    return EXIT_USAGE  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
