"""Closed-loop episodes for any controller with ``reset``/``act``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import world as W
from .events import Outcome
from .expert import ExpertConfig, sample_scenario

EVAL_STREAM = 0xE7A1  # keeps evaluation scenarios disjoint from dataset generation streams


@dataclass
class Trace:
    ee: list = field(default_factory=list)
    obj: list = field(default_factory=list)
    actions: list = field(default_factory=list)


def run_episode(policy, task: W.TaskSpec, traj, seed: int, trace: Trace = None) -> Outcome:
    """Run until termination. The trajectory reaches the controller only when
    it declares itself privileged."""
    policy.reset(task, traj if getattr(policy, "privileged", False) else None)
    state = W.reset(task, traj, seed)
    while not state.done:
        action = policy.act(W.observe(state, task))
        if trace is not None:
            trace.ee.append(state.ee.copy())
            trace.obj.append(state.obj.copy())
            trace.actions.append(action.as_array())
        state, _ = W.step(state, action, task, traj)
    return state.outcome


def eval_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, EVAL_STREAM, i])


def _as_policy(policy_or_factory):
    if isinstance(policy_or_factory, type) or not hasattr(policy_or_factory, "act"):
        return policy_or_factory()
    return policy_or_factory


def evaluate(policy, task: W.TaskSpec, episodes: int, seed: int = 0, cfg: ExpertConfig = ExpertConfig(),
             scenarios=None) -> list:
    """Outcomes over ``episodes`` scenarios drawn exactly as the expert's
    (grasp pose, dry run, back-calculated trajectory), so every episode is
    solvable in principle."""
    pol = _as_policy(policy)
    out = []
    for i in range(episodes):
        sc = scenarios[i] if scenarios is not None else sample_scenario(task, cfg, eval_rng(seed, i))
        out.append(run_episode(pol, sc.task, sc.traj, sc.seed))
    return out


def scenarios_for(task: W.TaskSpec, episodes: int, seed: int = 0, cfg: ExpertConfig = ExpertConfig()) -> list:
    return [sample_scenario(task, cfg, eval_rng(seed, i)) for i in range(episodes)]
