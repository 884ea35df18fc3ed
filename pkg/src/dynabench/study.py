"""Desk-scale experiments shared by the acceptance suite and the scripts:
dataset synthesis, the history/world-loss ablation and level sweeps."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import world as W
from .expert import ExpertConfig, synthesize_episode
from .flow import FlowParams
from .metrics import success_rate, summarize
from .policy import network as net
from .policy.agents import LearnedPolicy
from .policy.features import flow_feature_dim
from .policy.train import FlowSource, TrainConfig, build_dataset, train_on_batch
from .rollout import evaluate, scenarios_for

log = logging.getLogger(__name__)

TRAIN_STREAM = 0x7A11  # dataset draws, disjoint from the evaluation stream


@dataclass(frozen=True)
class Variant:
    name: str
    h: int
    lam: float
    N: int


ABLATION = (
    Variant("memoryless", 0, 0.0, 0),
    Variant("flow", 4, 0.0, 0),
    Variant("flow+aux N=2", 4, 0.05, 2),
    Variant("flow+aux N=4", 4, 0.05, 4),
)


def expert_dataset(task: W.TaskSpec, episodes: int, cfg: ExpertConfig, seed: int = 0) -> list:
    return [synthesize_episode(task, cfg, np.random.default_rng([seed, TRAIN_STREAM, i])) for i in range(episodes)]


def slice_batch(data: net.Batch, h_full: int, h: int, N: int) -> net.Batch:
    """Restrict a dataset built with ``h_full`` history maps to the most
    recent ``h`` maps and the first ``N`` future slots."""
    fd = flow_feature_dim()
    base = data.x.shape[1] - h_full * fd
    keep = np.r_[np.arange(base), base + np.arange((h_full - h) * fd, h_full * fd)]
    return net.Batch(data.x[:, keep], data.actions, data.futures[:, :N], data.valid[:, :N])


@dataclass
class AblationResult:
    sr: dict  # variant name -> list of SR per seed
    params: dict  # (variant name, seed) -> PolicyParams
    seconds: float

    def mean(self, name: str) -> float:
        return float(np.mean(self.sr[name]))


def run_ablation(task: W.TaskSpec, train_eps: list, base: TrainConfig, seeds, eval_episodes: int,
                 variants=ABLATION, expert_cfg: ExpertConfig = ExpertConfig(), flow: FlowParams = FlowParams(),
                 eval_seed: int = 1) -> AblationResult:
    """Train every variant for every seed on one dataset and evaluate each on
    the same held-out scenarios."""
    t0 = time.time()
    h_full = max(v.h for v in variants)
    n_full = max(v.N for v in variants)
    data = build_dataset(train_eps, replace(base, h=h_full, N=n_full), FlowSource(flow))
    log.info("dataset: %d samples x %d features (%.0fs)", len(data), data.x.shape[1], time.time() - t0)
    scenarios = scenarios_for(task, eval_episodes, eval_seed, expert_cfg)
    sr, params = {}, {}
    for v in variants:
        sub = slice_batch(data, h_full, v.h, v.N)
        sr[v.name] = []
        for seed in seeds:
            cfg = replace(base, h=v.h, lam=v.lam, N=v.N, seed=seed)
            res = train_on_batch(sub, cfg, task.n_arms * 3)
            outs = evaluate(LearnedPolicy(res.params, flow), task, eval_episodes, scenarios=scenarios)
            sr[v.name].append(success_rate(outs))
            params[(v.name, seed)] = res.params
            log.info("%s seed %d: SR %.1f (loss %.3f, %.0fs)", v.name, seed, sr[v.name][-1], res.final_loss,
                     time.time() - t0)
    return AblationResult(sr, params, time.time() - t0)


@dataclass(frozen=True)
class DeskPlan:
    """Sizes of the desk-scale ablation that the acceptance suite runs."""

    train_episodes: int = 1500
    eval_episodes: int = 100
    seeds: tuple = (0, 1, 2)
    # strides of 2 at the 0.2 s default tick span the same 0.4 s as 4 at 0.1 s
    train: TrainConfig = TrainConfig(history_stride=2, future_stride=2, lr=2e-3, batch_size=64, epochs=60)
    data_seed: int = 0
    eval_seed: int = 8
    budget_seconds: float = 1800.0


DESK = DeskPlan()


def desk_ablation(task: W.TaskSpec, plan: DeskPlan = DESK, expert_cfg: ExpertConfig = ExpertConfig(),
                  flow: FlowParams = FlowParams(), variants=ABLATION) -> AblationResult:
    t0 = time.time()
    episodes = expert_dataset(task, plan.train_episodes, expert_cfg, plan.data_seed)
    log.info("synthesized %d expert episodes (%.0fs)", len(episodes), time.time() - t0)
    res = run_ablation(task, episodes, plan.train, plan.seeds, plan.eval_episodes, variants, expert_cfg, flow,
                       plan.eval_seed)
    res.seconds = time.time() - t0
    return res


def level_sweep(policy_factory, task: W.TaskSpec, episodes: int, expert_cfg: ExpertConfig = ExpertConfig(),
                seed: int = 1) -> dict:
    """MetricsReport per dynamics level for one controller."""
    out = {}
    for level in (1, 2, 3):
        t = replace(task, level=level)
        outs = evaluate(policy_factory, t, episodes, seed, expert_cfg)
        out[level] = summarize(outs, t.taxonomy.value, level, t.alpha)
    return out
