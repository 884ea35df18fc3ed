"""Closed-loop controllers: the learned chunked policy and the scripted
reference controllers it is compared against.

Every controller exposes ``reset(task, traj=None)`` and ``act(obs) -> Action``.
Only controllers with ``privileged = True`` are handed the trajectory.
"""
from __future__ import annotations

import numpy as np

from .. import world as W
from ..flow import FlowParams, dense_flow, flow_to_rgb
from ..trajectories import position_at
from . import network as net
from .train import build_input, history_pairs

CLOSE_FACTOR = 1.5
FIXED_POINT_ITERS = 5


def object_centroid(frame: np.ndarray, task: W.TaskSpec, view: str = "main"):
    """World position of the object's pixel centroid, or None when not visible."""
    rows, cols = np.nonzero(frame == W.OBJECT_INTENSITY)
    if len(rows) == 0:
        return None
    return W.pixel_to_world(task, (cols.mean(), rows.mean()), view, (frame.shape[1], frame.shape[0]))


def _pursue(task: W.TaskSpec, ee: np.ndarray, aim: np.ndarray) -> np.ndarray:
    """Straight-line move toward ``aim`` at a_max, shortened so it lands on
    the aim point instead of overshooting it."""
    d = aim - ee
    dist = float(np.linalg.norm(d))
    if dist < 1e-12:
        return np.zeros(2)
    return d / dist * min(task.a_max, dist / task.dt)


class _Pursuit:
    """Shared single-arm pursuit logic; subclasses choose the aim point."""

    privileged = False

    def reset(self, task: W.TaskSpec, traj=None) -> None:
        self.task = task
        self.traj = traj

    def aim(self, obs: W.Observation, ee: np.ndarray, seen: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def act(self, obs: W.Observation) -> W.Action:
        task = self.task
        n = task.n_arms
        vel = np.zeros((n, 2))
        grip = [W.GripCommand.HOLD] * n
        proprio = obs.proprio
        held = np.nonzero(proprio[:, 3] > 0.5)[0]
        if len(held):
            vel[held[0]] = (0.0, task.a_max)  # lift until the task reports success
            return W.Action(vel, tuple(grip))
        seen = object_centroid(obs.frames["main"], task)
        if seen is None:
            return W.Action(vel, tuple(grip))
        ee_all = proprio[:, :2]
        arm = int(np.argmin(np.linalg.norm(ee_all - seen, axis=1)))
        ee = ee_all[arm]
        vel[arm] = _pursue(task, ee, self.aim(obs, ee, seen))
        near = np.linalg.norm(seen - ee) <= CLOSE_FACTOR * task.contact_radius
        grip[arm] = W.GripCommand.CLOSE if near else W.GripCommand.OPEN
        return W.Action(vel, tuple(grip))


class ReactivePolicy(_Pursuit):
    """Memoryless pursuit of the object's current observed centroid."""

    def aim(self, obs, ee, seen):
        return seen


def interception_time(traj, t: float, ee, speed: float, iters: int = FIXED_POINT_ITERS) -> float:
    """Fixed-point estimate of the lead time tau with |p(t + tau) - ee| = speed * tau."""
    tau = 0.0
    ee = np.asarray(ee, float)
    for _ in range(iters):
        tau = float(np.linalg.norm(position_at(traj, t + tau) - ee)) / speed
    return tau


class OraclePolicy(_Pursuit):
    """Pursuit of the predicted interception point, read from the true trajectory.

    The aim is the observed centroid shifted by the trajectory's displacement
    over the lead time, so a static target gives exactly the reactive command.
    """

    privileged = True

    def reset(self, task, traj=None):
        if traj is None:
            raise ValueError("oracle needs the trajectory")
        super().reset(task, traj)

    def aim(self, obs, ee, seen):
        tau = max(interception_time(self.traj, obs.t, ee, self.task.a_max), self.task.dt)
        return seen + (position_at(self.traj, obs.t + tau) - position_at(self.traj, obs.t))


class ZeroPolicy:
    """Never moves and never closes."""

    privileged = False

    def reset(self, task, traj=None):
        self.task = task

    def act(self, obs):
        return W.Action.hold(self.task.n_arms)


def decode_action(row: np.ndarray, task: W.TaskSpec) -> W.Action:
    a = np.asarray(row, float).reshape(task.n_arms, 3)
    vel = task.a_max * np.tanh(a[:, :2])
    grip = tuple(W.GripCommand.CLOSE if g > 0 else W.GripCommand.OPEN for g in a[:, 2])
    return W.Action(vel, grip)


class LearnedPolicy:
    """Receding-horizon execution of predicted chunks: the first ``replan_every``
    actions of each chunk run open loop, then the policy re-observes.

    Flow maps over the frame history are computed online from frames seen so
    far; the world head is never evaluated.
    """

    privileged = False

    def __init__(self, params: net.PolicyParams, flow_params: FlowParams = FlowParams(), replan_every: int = None):
        self.params = params
        self.flow_params = flow_params
        meta = params.meta
        self.h = int(meta.get("h", 0))
        self.stride = int(meta.get("history_stride", 1))
        self.replan_every = int(replan_every or meta.get("replan_every", 5))
        if not 1 <= self.replan_every <= params.K:
            raise ValueError("replan interval must lie in [1, K]")

    def reset(self, task, traj=None):
        self.task = task
        self.frames = []
        self.flows = {}
        self.chunk = None
        self.cursor = 0

    def _flow(self, start: int, end: int) -> np.ndarray:
        key = (start, end)
        if key not in self.flows:
            if start == end:
                shape = self.frames[end].shape + (3,)
                self.flows[key] = np.zeros(shape, np.uint8)
            else:
                f = dense_flow(self.frames[start], self.frames[end], self.flow_params)
                self.flows[key] = flow_to_rgb(f, self.flow_params)
        return self.flows[key]

    def act(self, obs: W.Observation) -> W.Action:
        self.frames.append(obs.frames["main"])
        k = len(self.frames) - 1
        if self.chunk is None or self.cursor >= self.replan_every:
            maps = [self._flow(s, e) for s, e in history_pairs(k, self.h, self.stride)]
            x = build_input(obs.frames["main"], obs.proprio, maps)
            self.chunk = net.forward_actions(self.params, x)
            self.cursor = 0
        row = self.chunk[self.cursor]
        self.cursor += 1
        return decode_action(row, self.task)
