"""Scripted expert demonstrations.

A grasp pose is drawn first, the scripted planner is timed against a static
object sitting on it (dry run), and the target trajectory is then translated
so the object passes through the grasp pose exactly when the gripper closes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import world as W
from .trajectories import (
    SamplerConfig,
    TrajectorySpec,
    back_calculate_initial,
    constant_velocity_segment,
    position_at,
    sample,
    velocity_at,
)
from .trajectories import DynamicsLevel

log = logging.getLogger(__name__)


class DryRunFailure(RuntimeError):
    pass


class SynthesisFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ExpertConfig:
    approach_speed: float = 0.1
    accel: Optional[float] = 1.0
    settle_steps: int = 1
    max_retries: int = 20
    randomized: bool = False
    correction_fraction: float = 0.25
    lift_direction: tuple = (0.0, 1.0)
    mask_stride: int = 1
    fov_shrink: float = 0.1

    def __post_init__(self):
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")
        if self.approach_speed <= 0:
            raise ValueError("approach_speed must be positive")


def _profile(dist: float, speed: float, accel: Optional[float], dt: float) -> np.ndarray:
    """Cumulative path length at each step boundary (length steps+1)."""
    if dist <= 0:
        return np.zeros(1)
    if accel is None:
        steps = int(math.ceil(dist / (speed * dt) - 1e-9))
        s = np.minimum(np.arange(steps + 1) * speed * dt, dist)
        s[-1] = dist
        return s
    t_ramp = speed / accel
    if accel * t_ramp**2 >= dist:
        t_ramp = math.sqrt(dist / accel)
        v_peak = accel * t_ramp
        total = 2 * t_ramp
    else:
        v_peak = speed
        total = 2 * t_ramp + (dist - accel * t_ramp**2) / speed
    steps = int(math.ceil(total / dt - 1e-9))

    def at(t):
        if t <= t_ramp:
            return 0.5 * accel * t * t
        if t >= total - t_ramp:
            r = total - t
            return dist - 0.5 * accel * r * r
        return 0.5 * accel * t_ramp**2 + v_peak * (t - t_ramp)

    # stretch the continuous profile onto an integer number of steps
    s = np.array([at(total * k / steps) for k in range(steps + 1)])
    s[-1] = dist
    return s


@dataclass
class Plan:
    arm: int
    home: np.ndarray
    grasp: np.ndarray
    path: np.ndarray  # (M+1,) cumulative distance along home->grasp
    close_step: int
    window_start: int

    @property
    def t_exec_steps(self) -> int:
        return self.close_step + 1


def make_plan(task: W.TaskSpec, grasp, cfg: ExpertConfig, homes=None) -> Plan:
    homes = task.home_poses() if homes is None else np.asarray(homes, float)
    grasp = np.asarray(grasp, dtype=float)
    arm = int(np.argmin(np.linalg.norm(homes - grasp, axis=1)))
    path = _profile(float(np.linalg.norm(grasp - homes[arm])), cfg.approach_speed, cfg.accel, task.dt)
    moves = len(path) - 1
    close_step = max(moves + cfg.settle_steps - 1, 0)
    window = int(math.ceil(cfg.correction_fraction * moves))
    return Plan(arm, homes[arm].copy(), grasp, path, close_step, max(moves - window, 0))


class ScriptedExpert:
    """Replays the nominal plan; near the end of the approach it re-aims at a
    linear extrapolation of the live object to the planned closing time.

    Needs privileged access to the trajectory (for the object's velocity).
    """

    privileged = True

    def __init__(self, task: W.TaskSpec, plan: Plan, cfg: ExpertConfig, traj: TrajectorySpec = None,
                 correct: bool = True):
        self.task = task
        self.plan = plan
        self.cfg = cfg
        self.traj = traj
        self.correct = correct and traj is not None
        self.lift_dir = np.asarray(cfg.lift_direction, float) / np.linalg.norm(cfg.lift_direction)

    def act(self, state: W.WorldState) -> W.Action:
        task, plan, k = self.task, self.plan, state.step
        n = task.n_arms
        vel = np.zeros((n, 2))
        grip = [W.GripCommand.HOLD] * n
        ee = state.ee[plan.arm]
        if k <= plan.close_step:
            grip[plan.arm] = W.GripCommand.CLOSE if k == plan.close_step else W.GripCommand.OPEN
            if self.correct and k >= plan.window_start:
                tau = (plan.close_step + 1 - k) * task.dt
                aim = state.obj + velocity_at(self.traj, state.t) * tau
                vel[plan.arm] = (aim - ee) / tau
            elif k + 1 < len(plan.path):
                direction = plan.grasp - plan.home
                direction = direction / np.linalg.norm(direction)
                target = plan.home + direction * plan.path[k + 1]
                vel[plan.arm] = (target - ee) / task.dt
            else:
                vel[plan.arm] = (plan.grasp - ee) / task.dt
        elif state.attached and task.taxonomy is W.Taxonomy.INTERCEPTION:
            moved = float(np.linalg.norm(state.obj - state.attach_pose))
            remaining = task.lift_height_proxy - moved
            if remaining > 0:
                speed = min(self.cfg.approach_speed, (remaining + 1e-6) / task.dt)
                vel[plan.arm] = self.lift_dir * speed
        return W.Action(vel, tuple(grip))


def _static_spec(pose, duration) -> TrajectorySpec:
    return TrajectorySpec(DynamicsLevel.LEVEL1, [constant_velocity_segment(pose, (0.0, 0.0), duration)])


def dry_run(task: W.TaskSpec, grasp_pose, cfg: ExpertConfig = ExpertConfig(), homes=None) -> float:
    """Time (s) from start until the gripper closes on a static object at
    ``grasp_pose``; independent of any trajectory."""
    grasp_pose = np.asarray(grasp_pose, dtype=float)
    if not W._inside(grasp_pose, task.workspace):
        raise DryRunFailure("grasp pose outside the workspace")
    static_task = replace(task, clutter_count=0, alpha=0.0, homes=None if homes is None else tuple(map(tuple, homes)))
    plan = make_plan(static_task, grasp_pose, cfg)
    traj = _static_spec(grasp_pose, task.t_max)
    state = W.reset(static_task, traj, 0)
    expert = ScriptedExpert(static_task, plan, cfg)
    while not state.done:
        state, events = W.step(state, expert.act(state), static_task, traj)
        for e in events:
            if e.tag is W.EventTag.CONTACT:
                return e.at
    raise DryRunFailure(f"planner did not reach {grasp_pose.tolist()} within t_max")


@dataclass
class Scenario:
    task: W.TaskSpec
    traj: TrajectorySpec
    grasp: np.ndarray
    t_exec: float
    seed: int


def randomize_task(task: W.TaskSpec, rng: np.random.Generator) -> W.TaskSpec:
    homes = task.home_poses() + rng.uniform(-0.03, 0.03, size=(task.n_arms, 2))
    return replace(
        task,
        clutter_count=int(rng.integers(0, 5)),
        object_radius=task.object_radius * float(rng.uniform(0.7, 1.3)),
        homes=tuple(map(tuple, homes)),
    )


def sample_scenario(task: W.TaskSpec, cfg: ExpertConfig, rng: np.random.Generator, max_tries: int = 200) -> Scenario:
    """Grasp pose, dry-run timing and a back-calculated trajectory whose
    start lies inside the fov."""
    if cfg.randomized:
        task = randomize_task(task, rng)
    fx0, fy0, fx1, fy1 = task.fov
    mx, my = cfg.fov_shrink * 0.5 * (fx1 - fx0), cfg.fov_shrink * 0.5 * (fy1 - fy0)
    scfg = SamplerConfig(alpha=task.alpha, workspace=task.workspace, duration=task.t_max)
    for _ in range(max_tries):
        grasp = np.array([rng.uniform(fx0 + mx, fx1 - mx), rng.uniform(fy0 + my, fy1 - my)])
        t_exec = dry_run(task, grasp, cfg, homes=task.home_poses())
        traj = sample(task.level, scfg, duration=max(task.t_max, t_exec), rng=rng)
        traj = back_calculate_initial(traj, t_exec, grasp)
        if W._inside(position_at(traj, 0.0), task.fov):
            return Scenario(task, traj, grasp, t_exec, int(rng.integers(2**63)))
    raise SynthesisFailure("could not place a trajectory start inside the fov")


@dataclass(eq=False)
class Episode:
    task: W.TaskSpec
    traj: TrajectorySpec
    seed: int
    outcome: object
    frames: dict  # view -> (T, H, W) uint8
    proprio: np.ndarray  # (T, arms, 4)
    actions: np.ndarray  # (T, arms * 3)
    obj_poses: np.ndarray  # (T, 2)
    masks: Optional[np.ndarray] = None  # (ceil(T / stride), H, W) uint8, main view
    mask_stride: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    def mask_at(self, k: int) -> Optional[np.ndarray]:
        if self.masks is None or self.mask_stride < 1 or k % self.mask_stride:
            return None
        return self.masks[k // self.mask_stride]


def record_rollout(task, traj, seed, actor, mask_stride=1, views=None):
    """Roll ``actor`` (state -> Action) through a fresh world, recording every step."""
    views = tuple(views or task.views)
    state = W.reset(task, traj, seed)
    frames = {v: [] for v in views}
    proprio, actions, poses, masks = [], [], [], []
    while not state.done:
        for v in views:
            frames[v].append(W.render(state, task, v))
        if mask_stride and state.step % mask_stride == 0:
            masks.append(W.ground_truth_mask(state, task, "main"))
        proprio.append(state.proprio())
        poses.append(state.obj.copy())
        action = actor(state)
        actions.append(action.as_array())
        state, _ = W.step(state, action, task, traj)
    h, w = task.resolution[1], task.resolution[0]
    return Episode(
        task=task,
        traj=traj,
        seed=seed,
        outcome=state.outcome,
        frames={v: np.array(f, dtype=np.uint8).reshape(-1, h, w) for v, f in frames.items()},
        proprio=np.array(proprio).reshape(-1, task.n_arms, 4),
        actions=np.array(actions).reshape(-1, task.n_arms * 3),
        obj_poses=np.array(poses).reshape(-1, 2),
        masks=np.array(masks, dtype=np.uint8).reshape(-1, h, w) if mask_stride else None,
        mask_stride=mask_stride,
    )


def synthesize_episode(task: W.TaskSpec, cfg: ExpertConfig, rng: np.random.Generator) -> Episode:
    for attempt in range(1, cfg.max_retries + 1):
        sc = sample_scenario(task, cfg, rng)
        plan = make_plan(sc.task, sc.grasp, cfg)
        expert = ScriptedExpert(sc.task, plan, cfg, sc.traj)
        ep = record_rollout(sc.task, sc.traj, sc.seed, expert.act, cfg.mask_stride)
        if ep.outcome.success:
            ep.meta = {"grasp": sc.grasp.tolist(), "t_exec": sc.t_exec, "attempts": attempt}
            return ep
        log.debug("attempt %d rejected: %s", attempt, [e.tag.value for e in ep.outcome.events])
    raise SynthesisFailure(f"no successful rollout in {cfg.max_retries} attempts")


def replay(ep: Episode):
    """Re-execute the stored actions; returns the final WorldState."""
    state = W.reset(ep.task, ep.traj, ep.seed)
    for a in ep.actions:
        if state.done:
            break
        state, _ = W.step(state, W.Action.from_array(a), ep.task, ep.traj)
    return state


@dataclass
class DatasetManifest:
    seed: int
    episodes: list = field(default_factory=list)  # relative file paths
    stats: dict = field(default_factory=dict)  # task key -> {requested, accepted, attempts, failures}

    def to_dict(self) -> dict:
        return {"seed": self.seed, "episodes": list(self.episodes), "stats": self.stats}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(int(d["seed"]), list(d["episodes"]), dict(d["stats"]))


def task_key(task: W.TaskSpec) -> str:
    return f"{task.taxonomy.value}-L{int(task.level)}-a{task.alpha:g}"


def generate_dataset(tasks, per_task: int, cfg: ExpertConfig, seed: int, out_dir) -> DatasetManifest:
    """Synthesize ``per_task`` episodes for every task and write them to
    ``out_dir`` (one file each) plus ``manifest.json``."""
    import json

    from .container import write_episode

    out_dir = Path(out_dir)
    manifest = DatasetManifest(seed)
    if per_task < 1:
        return manifest
    out_dir.mkdir(parents=True, exist_ok=True)
    for ti, task in enumerate(tasks):
        key = task_key(task)
        stats = {"requested": per_task, "accepted": 0, "attempts": 0, "failures": []}
        for i in range(per_task):
            rng = np.random.default_rng([seed, ti, i])
            try:
                ep = synthesize_episode(task, cfg, rng)
            except SynthesisFailure:
                stats["attempts"] += cfg.max_retries
                stats["failures"].append(i)
                continue
            stats["attempts"] += ep.meta["attempts"]
            name = f"{key}_{i:05d}.dmb"
            try:
                write_episode(out_dir / name, ep)
            except OSError as exc:
                raise OSError(f"writing episode {i} of {key}: {exc}") from exc
            manifest.episodes.append(name)
            stats["accepted"] += 1
        manifest.stats[key] = stats
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True))
    return manifest
