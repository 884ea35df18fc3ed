"""Planar kinematic world: velocity-controlled end-effectors, a target that
follows a prescribed trajectory until grasped, static clutter, a raster
camera and termination logic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .events import TERMINAL_TAGS, Event, EventTag, Outcome
from .trajectories import DynamicsLevel, TrajectorySpec, position_at

OBJECT_INTENSITY = 255
EE_INTENSITY = 180
CLUTTER_INTENSITY = 90

# crop rectangles as fractions of the fov: (x0, y0, x1, y1)
VIEW_CROPS = {
    "main": (0.0, 0.0, 1.0, 1.0),
    "left": (0.0, 0.0, 0.75, 1.0),
    "right": (0.25, 0.0, 1.0, 1.0),
}

_EPS = 1e-9


class Taxonomy(str, enum.Enum):
    INTERCEPTION = "interception"
    TRACKING = "tracking"


class Gripper(enum.IntEnum):
    OPEN = 0
    CLOSED = 1


class GripCommand(enum.IntEnum):
    OPEN = 0
    CLOSE = 1
    HOLD = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    taxonomy: Taxonomy = Taxonomy.INTERCEPTION
    hold_window: float = 0.5
    level: DynamicsLevel = DynamicsLevel.LEVEL1
    alpha: float = 0.1
    dt: float = 0.2
    t_max: float = 6.0
    workspace: tuple = (-0.3, -0.3, 0.3, 0.3)
    fov: tuple = (-0.2, -0.2, 0.2, 0.2)
    contact_radius: float = 0.01
    lift_height_proxy: float = 0.05
    clutter_count: int = 0
    dual_arm: bool = False
    a_max: float = 0.5
    object_radius: float = 0.03
    ee_radius: float = 0.025
    clutter_radius: float = 0.03
    homes: Optional[tuple] = None
    resolution: tuple = (64, 64)
    views: tuple = ("main",)

    def __post_init__(self):
        object.__setattr__(self, "taxonomy", Taxonomy(self.taxonomy))
        object.__setattr__(self, "level", DynamicsLevel(self.level))
        for name in ("workspace", "fov", "resolution", "views"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.homes is not None:
            object.__setattr__(self, "homes", tuple(tuple(map(float, h)) for h in self.homes))
        if self.dt <= 0 or self.t_max < self.dt:
            raise ConfigError("need dt > 0 and t_max >= dt")
        if self.contact_radius <= 0:
            raise ConfigError("contact_radius must be positive")
        wx0, wy0, wx1, wy1 = self.workspace
        fx0, fy0, fx1, fy1 = self.fov
        if not (wx0 <= fx0 < fx1 <= wx1 and wy0 <= fy0 < fy1 <= wy1):
            raise ConfigError("fov must lie inside the workspace")
        if self.clutter_count < 0:
            raise ConfigError("clutter_count must be >= 0")
        if self.homes is not None and len(self.homes) != self.n_arms:
            raise ConfigError("one home pose per arm required")
        for v in self.views:
            if v not in VIEW_CROPS:
                raise ConfigError(f"unknown view {v!r}")

    @property
    def n_arms(self) -> int:
        return 2 if self.dual_arm else 1

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - _EPS))

    def home_poses(self) -> np.ndarray:
        if self.homes is not None:
            return np.array(self.homes, dtype=float)
        fx0, fy0, fx1, fy1 = self.fov
        cx, y = 0.5 * (fx0 + fx1), fy0 + 0.1 * (fy1 - fy0)
        if self.dual_arm:
            dx = 0.3 * (fx1 - fx0)
            return np.array([[cx - dx, y], [cx + dx, y]])
        return np.array([[cx, y]])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["taxonomy"] = self.taxonomy.value
        d["level"] = int(self.level)
        d["workspace"] = list(self.workspace)
        d["fov"] = list(self.fov)
        d["resolution"] = list(self.resolution)
        d["views"] = list(self.views)
        d["homes"] = None if self.homes is None else [list(h) for h in self.homes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Action:
    """Per-arm velocity commands (arms, 2) and gripper commands."""

    velocity: np.ndarray
    gripper: tuple

    @classmethod
    def hold(cls, n_arms: int = 1) -> "Action":
        return cls(np.zeros((n_arms, 2)), (GripCommand.HOLD,) * n_arms)

    def as_array(self) -> np.ndarray:
        """Flat f64 layout used in episode files: per arm (vx, vy, grip)."""
        grip = np.array([float(g) for g in self.gripper])[:, None]
        return np.concatenate([np.asarray(self.velocity, float), grip], axis=1).ravel()

    @classmethod
    def from_array(cls, arr) -> "Action":
        arr = np.asarray(arr, dtype=float).reshape(-1, 3)
        return cls(arr[:, :2].copy(), tuple(GripCommand(int(g)) for g in arr[:, 2]))


@dataclass(frozen=True, eq=False)
class Observation:
    frames: dict
    proprio: np.ndarray
    t: float


@dataclass(eq=False)
class WorldState:
    t: float
    step: int
    ee: np.ndarray
    gripper: tuple
    obj: np.ndarray
    attached: bool
    clutter: np.ndarray
    events: tuple = ()
    ee_initial: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))
    attach_arm: int = -1
    attach_step: int = -1
    attach_pose: Optional[np.ndarray] = None
    attach_offset: Optional[np.ndarray] = None
    colliding: tuple = ()
    outcome: Optional[Outcome] = None

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def copy(self) -> "WorldState":
        return replace(self, ee=self.ee.copy(), obj=self.obj.copy())

    def proprio(self) -> np.ndarray:
        rows = []
        for i, (p, g) in enumerate(zip(self.ee, self.gripper)):
            holding = 1.0 if self.attached and self.attach_arm == i else 0.0
            rows.append([p[0], p[1], float(g == Gripper.CLOSED), holding])
        return np.array(rows)

    def fingerprint(self) -> tuple:
        """Hashable exact snapshot, used for determinism checks."""
        return (
            self.step,
            self.ee.tobytes(),
            tuple(int(g) for g in self.gripper),
            self.obj.tobytes(),
            self.attached,
            self.clutter.tobytes(),
            self.events,
        )


def _inside(p, rect) -> bool:
    x0, y0, x1, y1 = rect
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


def reset(task: TaskSpec, traj: TrajectorySpec, seed: int) -> WorldState:
    from .trajectories import max_speed

    if max_speed(traj) > task.alpha + 1e-4:
        raise ConfigError("trajectory is faster than the task's alpha cap")
    rng = np.random.default_rng(seed)
    homes = task.home_poses()
    obj = position_at(traj, 0.0)
    clutter = np.zeros((0, 3))
    if task.clutter_count:
        keep_out = [obj] + list(homes)
        placed = []
        fx0, fy0, fx1, fy1 = task.fov
        rc = task.clutter_radius
        for _ in range(task.clutter_count):
            for _attempt in range(1000):
                c = np.array([rng.uniform(fx0 + rc, fx1 - rc), rng.uniform(fy0 + rc, fy1 - rc)])
                if all(np.linalg.norm(c - k) - rc >= 2 * task.contact_radius for k in keep_out):
                    break
            else:
                raise ConfigError("could not place clutter after 1000 rejections")
            placed.append([c[0], c[1], rc])
        clutter = np.array(placed)
    return WorldState(
        t=0.0,
        step=0,
        ee=homes.copy(),
        gripper=(Gripper.OPEN,) * task.n_arms,
        obj=obj,
        attached=False,
        clutter=clutter,
        ee_initial=homes.copy(),
        colliding=(False,) * task.n_arms,
    )


def step(state: WorldState, action: Action, task: TaskSpec, traj: TrajectorySpec):
    """Advance one tick. Returns ``(new_state, new_events)``."""
    if state.done:
        raise RuntimeError("cannot step a terminated episode")
    vel = np.asarray(action.velocity, dtype=float).reshape(task.n_arms, 2)
    norms = np.linalg.norm(vel, axis=1, keepdims=True)
    scale = np.where(norms > task.a_max, task.a_max / np.maximum(norms, 1e-300), 1.0)
    vel = vel * scale

    s = state.copy()
    s.step = state.step + 1
    s.t = s.step * task.dt
    s.ee = state.ee + vel * task.dt

    grip = list(state.gripper)
    for i, cmd in enumerate(action.gripper):
        if s.attached and i == s.attach_arm:
            continue
        if cmd == GripCommand.CLOSE:
            grip[i] = Gripper.CLOSED
        elif cmd == GripCommand.OPEN:
            grip[i] = Gripper.OPEN
    s.gripper = tuple(grip)

    new_events = []
    if s.attached:
        s.obj = s.ee[s.attach_arm] + s.attach_offset
    else:
        s.obj = position_at(traj, s.t)
        dists = np.linalg.norm(s.ee - s.obj, axis=1)
        for i in np.argsort(dists, kind="stable"):
            if s.gripper[i] == Gripper.CLOSED and dists[i] <= task.contact_radius:
                s.attached = True
                s.attach_arm = int(i)
                s.attach_step = s.step
                s.attach_pose = s.obj.copy()
                s.attach_offset = s.obj - s.ee[i]
                new_events.append(Event(EventTag.CONTACT, s.t))
                break

    colliding = []
    for p in s.ee:
        hit = bool(len(s.clutter)) and bool(
            np.any(np.linalg.norm(s.clutter[:, :2] - p, axis=1) <= s.clutter[:, 2])
        )
        colliding.append(hit)
    if any(c and not prev for c, prev in zip(colliding, state.colliding)):
        new_events.append(Event(EventTag.CLUTTER_COLLISION, s.t))
    s.colliding = tuple(colliding)

    if not s.attached and not _inside(s.obj, task.fov):
        new_events.append(Event(EventTag.OUT_OF_VIEW, s.t))

    s.events = state.events + tuple(new_events)
    outcome = check_termination(s, task)
    if outcome is not None:
        terminal = [e for e in outcome.events if e.tag in TERMINAL_TAGS and e not in s.events]
        new_events.extend(terminal)
        s.events = outcome.events
        s.outcome = outcome
    return s, tuple(new_events)


def check_termination(state: WorldState, task: TaskSpec) -> Optional[Outcome]:
    tags = {e.tag for e in state.events}
    if EventTag.SUCCESS in tags or EventTag.TIMEOUT in tags:
        return state.outcome
    verdict = None
    if EventTag.OUT_OF_VIEW in tags:
        verdict = False
    elif state.attached:
        if task.taxonomy is Taxonomy.INTERCEPTION:
            lifted = np.linalg.norm(state.obj - state.attach_pose)
            if lifted >= task.lift_height_proxy - _EPS:
                verdict = True
        else:
            held = (state.step - state.attach_step) * task.dt
            if held >= task.hold_window - _EPS:
                verdict = True
    if verdict is None and state.t >= task.t_max - _EPS:
        verdict = False
    if verdict is None:
        return None
    events = state.events
    if verdict:
        events = events + (Event(EventTag.SUCCESS, state.t),)
    elif EventTag.OUT_OF_VIEW not in tags:
        events = events + (Event(EventTag.TIMEOUT, state.t),)
    return Outcome(
        success=verdict,
        t_end=state.t,
        events=events,
        ee_initial=state.ee_initial.copy(),
        ee_final=state.ee.copy(),
        obj_final=state.obj.copy(),
    )


# --- rendering -------------------------------------------------------------


def view_rect(task: TaskSpec, view: str) -> tuple:
    fx0, fy0, fx1, fy1 = task.fov
    a, b, c, d = VIEW_CROPS[view]
    w, h = fx1 - fx0, fy1 - fy0
    return (fx0 + a * w, fy0 + b * h, fx0 + c * w, fy0 + d * h)


def _stamp(grid, rect, center, radius, value) -> None:
    """Fill pixels whose centre lies inside the disc (no anti-aliasing)."""
    x0, y0, x1, y1 = rect
    h, w = grid.shape
    pw, ph = (x1 - x0) / w, (y1 - y0) / h
    # disc centre in continuous pixel-index coordinates (col, row)
    u = (center[0] - x0) / pw - 0.5
    v = (y1 - center[1]) / ph - 0.5
    ru, rv = radius / pw, radius / ph
    c0, c1 = max(int(math.floor(u - ru)), 0), min(int(math.ceil(u + ru)), w - 1)
    r0, r1 = max(int(math.floor(v - rv)), 0), min(int(math.ceil(v + rv)), h - 1)
    if c0 > c1 or r0 > r1:
        return
    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    inside = ((cols[None, :] - u) / ru) ** 2 + ((rows[:, None] - v) / rv) ** 2 <= 1.0
    grid[r0 : r1 + 1, c0 : c1 + 1][inside] = value


def render(state: WorldState, task: TaskSpec, view: str = "main", resolution=None) -> np.ndarray:
    w, h = resolution or task.resolution
    if w < 16 or h < 16:
        raise ValueError("resolution must be at least 16x16")
    rect = view_rect(task, view)
    grid = np.zeros((h, w), dtype=np.uint8)
    for cx, cy, r in state.clutter:
        _stamp(grid, rect, (cx, cy), r, CLUTTER_INTENSITY)
    for p in state.ee:
        _stamp(grid, rect, p, task.ee_radius, EE_INTENSITY)
    _stamp(grid, rect, state.obj, task.object_radius, OBJECT_INTENSITY)
    return grid


def ground_truth_mask(state: WorldState, task: TaskSpec, view: str = "main", resolution=None) -> np.ndarray:
    w, h = resolution or task.resolution
    grid = np.zeros((h, w), dtype=np.uint8)
    _stamp(grid, view_rect(task, view), state.obj, task.object_radius, 1)
    return grid


def observe(state: WorldState, task: TaskSpec) -> Observation:
    frames = {v: render(state, task, v) for v in task.views}
    return Observation(frames, state.proprio(), state.t)


def world_to_pixel(task: TaskSpec, p, view: str = "main", resolution=None) -> np.ndarray:
    """Continuous (col, row) coordinates of world point ``p``."""
    w, h = resolution or task.resolution
    x0, y0, x1, y1 = view_rect(task, view)
    return np.array([(p[0] - x0) / (x1 - x0) * w - 0.5, (y1 - p[1]) / (y1 - y0) * h - 0.5])


def pixel_to_world(task: TaskSpec, uv, view: str = "main", resolution=None) -> np.ndarray:
    w, h = resolution or task.resolution
    x0, y0, x1, y1 = view_rect(task, view)
    return np.array([x0 + (uv[0] + 0.5) / w * (x1 - x0), y1 - (uv[1] + 0.5) / h * (y1 - y0)])
