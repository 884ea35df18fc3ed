"""Run configuration: ``key = value`` lines with ``#`` comments.

Every key maps onto one field of RunConfig; unknown keys are rejected so a
typo can never silently fall back to a default.
"""
from __future__ import annotations

from dataclasses import MISSING, asdict, dataclass, fields, replace
from pathlib import Path

from . import world as W
from .expert import ExpertConfig
from .flow import FlowParams
from .policy.train import TrainConfig

_TASK = W.TaskSpec()
_EXPERT = ExpertConfig()
_FLOW = FlowParams()
_TRAIN = TrainConfig()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # task
    taxonomy: str = _TASK.taxonomy.value
    level: int = int(_TASK.level)
    alpha: float = _TASK.alpha
    alphas: tuple = ()
    dt: float = _TASK.dt
    t_max: float = _TASK.t_max
    contact_radius: float = _TASK.contact_radius
    lift_height_proxy: float = _TASK.lift_height_proxy
    hold_window: float = _TASK.hold_window
    clutter_count: int = _TASK.clutter_count
    dual_arm: bool = _TASK.dual_arm
    a_max: float = _TASK.a_max
    object_radius: float = _TASK.object_radius
    fov: tuple = _TASK.fov
    resolution: tuple = _TASK.resolution
    # run
    seed: int = 0
    seeds: tuple = ()
    episodes: int = 100
    out: str = "runs"
    dataset: str = ""
    policy: str = "reactive"
    checkpoint: str = "policy.dpp"
    inputs: tuple = ()
    cache_dir: str = ""
    # expert
    approach_speed: float = _EXPERT.approach_speed
    settle_steps: int = _EXPERT.settle_steps
    max_retries: int = _EXPERT.max_retries
    randomized: bool = _EXPERT.randomized
    mask_stride: int = _EXPERT.mask_stride
    # flow
    flow_pyramid_levels: int = _FLOW.pyramid_levels
    flow_window: int = _FLOW.window
    flow_iterations: int = _FLOW.iterations
    flow_poly_n: int = _FLOW.poly_n
    flow_poly_sigma: float = _FLOW.poly_sigma
    flow_mag_percentile: float = _FLOW.mag_percentile
    flow_zero_threshold: float = _FLOW.zero_threshold
    # training
    K: int = _TRAIN.K
    h: int = _TRAIN.h
    history_stride: int = _TRAIN.history_stride
    N: int = _TRAIN.N
    future_stride: int = _TRAIN.future_stride
    lam: float = _TRAIN.lam
    lr: float = _TRAIN.lr
    weight_decay: float = _TRAIN.weight_decay
    warmup_frac: float = _TRAIN.warmup_frac
    epochs: int = _TRAIN.epochs
    batch_size: int = _TRAIN.batch_size
    hidden: int = _TRAIN.hidden
    replan_every: int = _TRAIN.replan_every

    # --- derived configs -----------------------------------------------------

    def task(self, **overrides) -> W.TaskSpec:
        kw = dict(
            taxonomy=self.taxonomy, level=self.level, alpha=self.alpha, dt=self.dt, t_max=self.t_max,
            contact_radius=self.contact_radius, lift_height_proxy=self.lift_height_proxy,
            hold_window=self.hold_window, clutter_count=self.clutter_count, dual_arm=self.dual_arm,
            a_max=self.a_max, object_radius=self.object_radius, fov=self.fov, resolution=self.resolution,
        )
        kw.update(overrides)
        try:
            task = W.TaskSpec(**kw)
        except (W.ConfigError, ValueError) as exc:
            raise ConfigError(f"task: {exc}") from exc
        if self.approach_speed > task.a_max:
            raise ConfigError("approach_speed must not exceed a_max")
        return task

    def expert(self) -> ExpertConfig:
        return _build(ExpertConfig, approach_speed=self.approach_speed, settle_steps=self.settle_steps,
                      max_retries=self.max_retries, randomized=self.randomized, mask_stride=self.mask_stride)

    def flow(self) -> FlowParams:
        return _build(FlowParams, **{f.name[5:]: getattr(self, f.name) for f in fields(self) if f.name.startswith("flow_")})

    def train(self, **overrides) -> TrainConfig:
        kw = dict(K=self.K, h=self.h, history_stride=self.history_stride, N=self.N, future_stride=self.future_stride,
                  lam=self.lam, lr=self.lr, weight_decay=self.weight_decay, warmup_frac=self.warmup_frac,
                  epochs=self.epochs, batch_size=self.batch_size, seed=self.seed, hidden=self.hidden,
                  replan_every=self.replan_every)
        kw.update(overrides)
        return _build(TrainConfig, **kw)

    def seed_list(self) -> list:
        return list(self.seeds) or [self.seed]

    def alpha_list(self) -> list:
        return list(self.alphas) or [self.alpha]

    def validate(self) -> "RunConfig":
        self.task()
        self.expert()
        self.flow()
        self.train()
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        return self

    def render(self) -> str:
        """Every key with its resolved value, in the file syntax."""
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k} = {_format(v)}")
        return "\n".join(lines) + "\n"


def _build(cls, **kw):
    try:
        return cls(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_scalar(kind, text: str):
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def _element_type(name: str):
    default = RunConfig.__dataclass_fields__[name].default
    if default is MISSING or not default:
        return {"alphas": float, "seeds": int, "inputs": str}[name]
    return type(default[0])


def _parse_value(name: str, text: str):
    f = RunConfig.__dataclass_fields__[name]
    kind = type(f.default)
    if kind is tuple:
        elem = _element_type(name)
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_parse_scalar(elem, p) for p in parts)
    return _parse_scalar(kind, text)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in RunConfig.__dataclass_fields__:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
