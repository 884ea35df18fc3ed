"""Success rate, route completion, manipulation score, the alpha sweep and a
discounted interception cost."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .events import EventTag, Outcome

OOV_FACTOR = 0.5
COLLISION_FACTOR = 0.8

CSV_HEADER = ["task", "level", "alpha", "episodes", "sr", "ms", "rc", "penalty_oov", "penalty_collision"]


def route_completion(outcome: Outcome) -> float:
    if outcome.success:
        return 100.0
    ee0 = np.atleast_2d(outcome.ee_initial)
    ee1 = np.atleast_2d(outcome.ee_final)
    obj = np.asarray(outcome.obj_final, dtype=float)
    best = 0.0
    for start, end in zip(ee0, ee1):
        denom = np.linalg.norm(start - obj)
        if denom == 0:
            rho = 1.0
        else:
            rho = 1.0 - np.linalg.norm(end - obj) / denom
        best = max(best, min(max(rho, 0.0), 1.0))
    return 100.0 * best


def _tags(events) -> set:
    return {getattr(e, "tag", e) for e in events}


def manipulation_score(rc: float, events: Iterable) -> float:
    if not 0.0 <= rc <= 100.0:
        raise ValueError(f"rc must be in [0, 100], got {rc}")
    tags = _tags(events)
    ms = rc
    if EventTag.OUT_OF_VIEW in tags:
        ms *= OOV_FACTOR
    if EventTag.CLUTTER_COLLISION in tags:
        ms *= COLLISION_FACTOR
    return ms


def success_rate(outcomes: Sequence[Outcome]) -> float:
    if len(outcomes) == 0:
        raise ValueError("success_rate of an empty list")
    return 100.0 * sum(bool(o.success) for o in outcomes) / len(outcomes)


@dataclass(frozen=True)
class CostConfig:
    gamma: float = 0.99
    horizon: int = 100
    control_weight: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.horizon < 1 or self.control_weight < 0:
            raise ValueError("horizon >= 1 and control_weight >= 0 required")


def evaluate_cost(trace, cfg: CostConfig) -> float:
    """Discounted sum of nearest-arm distance plus weighted squared command."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    total = 0.0
    for k, (state, action) in enumerate(trace[: cfg.horizon]):
        dist = np.min(np.linalg.norm(np.atleast_2d(state.ee) - state.obj, axis=1))
        a = np.asarray(getattr(action, "velocity", action), dtype=float).ravel()
        total += cfg.gamma**k * (dist + cfg.control_weight * float(a @ a))
    return float(total)


@dataclass(frozen=True)
class MetricsReport:
    task: str
    level: int
    alpha: float
    episodes: int
    sr: float
    ms: float
    rc: float
    penalty_oov: int
    penalty_collision: int

    def row(self) -> dict:
        return {
            "task": self.task,
            "level": self.level,
            "alpha": f"{self.alpha:g}",
            "episodes": self.episodes,
            "sr": f"{self.sr:.2f}",
            "ms": f"{self.ms:.2f}",
            "rc": f"{self.rc:.2f}",
            "penalty_oov": self.penalty_oov,
            "penalty_collision": self.penalty_collision,
        }


def summarize(outcomes: Sequence[Outcome], task: str, level: int, alpha: float) -> MetricsReport:
    rcs = [route_completion(o) for o in outcomes]
    mss = [manipulation_score(rc, o.events) for rc, o in zip(rcs, outcomes)]
    return MetricsReport(
        task=task,
        level=int(level),
        alpha=float(alpha),
        episodes=len(outcomes),
        sr=success_rate(outcomes),
        ms=float(np.mean(mss)),
        rc=float(np.mean(rcs)),
        penalty_oov=sum(o.has(EventTag.OUT_OF_VIEW) for o in outcomes),
        penalty_collision=sum(o.has(EventTag.CLUTTER_COLLISION) for o in outcomes),
    )


def write_csv(reports: Iterable[MetricsReport], fh=None, extra_columns: dict = None) -> str:
    """Write reports as CSV; returns the text when ``fh`` is None."""
    buf = io.StringIO() if fh is None else fh
    extra = dict(extra_columns or {})
    writer = csv.DictWriter(buf, list(extra) + CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow({**extra, **r.row()})
    return buf.getvalue() if fh is None else ""


def read_csv(fh) -> list:
    return list(csv.DictReader(fh))


def sweep_alpha(policy_factory, task, alphas, episodes: int, seed: int = 0) -> list:
    """One MetricsReport per alpha. Every row reuses ``seed`` so rows are
    comparable; trajectories are freshly sampled at each cap."""
    from .rollout import evaluate

    alphas = list(alphas)
    if alphas != sorted(alphas):
        raise ValueError("alphas must be sorted ascending")
    if episodes < 1:
        raise ValueError("need at least one episode per point")
    rows = []
    for alpha in alphas:
        t = replace(task, alpha=float(alpha))
        outcomes = evaluate(policy_factory, t, episodes, seed)
        rows.append(summarize(outcomes, t.taxonomy.value, int(t.level), alpha))
    return rows
