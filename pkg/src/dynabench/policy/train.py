"""Behavioural cloning with the auxiliary future-feature objective."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..flow import FlowCache, FlowCacheKey, FlowParams, dense_flow, flow_to_rgb
from ..world import GripCommand
from . import network as net
from .features import DESC_DIM, flow_map_features, object_future_feature, patch_features

log = logging.getLogger(__name__)

CKPT_MAGIC = b"DPP1"
CKPT_VERSION = 1
VEL_CLIP = 0.999
STD_FLOOR = 0.1  # rarely active inputs are not blown up by standardisation


@dataclass(frozen=True)
class TrainConfig:
    K: int = 15
    h: int = 4
    history_stride: int = 4
    N: int = 4
    future_stride: int = 4
    lam: float = 0.05
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 1e-8
    warmup_frac: float = 0.05
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    hidden: int = 64
    replan_every: int = 5
    log_every: int = 50

    def __post_init__(self):
        if self.K < 1 or self.N < 0 or self.h < 0:
            raise ValueError("need K >= 1, N >= 0, h >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if min(self.history_stride, self.future_stride, self.batch_size, self.replan_every) < 1:
            raise ValueError("strides, batch size and replan interval must be >= 1")


# --- inputs and targets ----------------------------------------------------------


def history_pairs(t: int, h: int, stride: int) -> list:
    """(start, end) step pairs of the chained history, oldest first; steps
    before the episode start are clamped to 0."""
    return [(max(t - stride * j, 0), max(t - stride * (j - 1), 0)) for j in range(h, 0, -1)]


def build_input(frame: np.ndarray, proprio: np.ndarray, flow_maps) -> np.ndarray:
    parts = [patch_features(frame).ravel(), np.asarray(proprio, float).ravel()]
    parts += [flow_map_features(m) for m in flow_maps]
    return np.concatenate(parts)


def action_targets(actions: np.ndarray, proprio: np.ndarray, a_max: float) -> np.ndarray:
    """Per step, per arm: atanh-scaled velocity and the desired gripper state (+1 closed, -1 open)."""
    T = len(actions)
    a = actions.reshape(T, -1, 3)
    vel = np.arctanh(np.clip(a[..., :2] / a_max, -VEL_CLIP, VEL_CLIP))
    closed_now = proprio.reshape(T, -1, 4)[..., 2] > 0.5
    cmd = a[..., 2].round().astype(int)
    grip = np.where(cmd == GripCommand.CLOSE, 1.0, np.where(cmd == GripCommand.OPEN, -1.0, np.where(closed_now, 1.0, -1.0)))
    return np.concatenate([vel, grip[..., None]], axis=-1).reshape(T, -1)


class FlowSource:
    """Flow maps for stored episodes, memoised and optionally disk-cached."""

    def __init__(self, params: FlowParams = FlowParams(), cache: Optional[FlowCache] = None, dataset: str = "memory"):
        self.params = params
        self.cache = cache
        self.dataset = dataset
        self._memo = {}

    def get(self, ep_id: str, frames: np.ndarray, start: int, end: int) -> np.ndarray:
        memo_key = (ep_id, start, end)
        if memo_key in self._memo:
            return self._memo[memo_key]

        def compute():
            if start == end:
                return np.zeros(frames.shape[1:] + (3,), np.uint8)
            return flow_to_rgb(dense_flow(frames[start], frames[end], self.params), self.params)

        if self.cache is None:
            rgb = compute()
        else:
            h, w = frames.shape[1:]
            key = FlowCacheKey(self.dataset, ep_id, end, (start - end, 0), "main", (w, h))
            rgb = self.cache.get_or_compute(key, compute)
        self._memo[memo_key] = rgb
        return rgb


def episode_samples(ep, ep_id: str, cfg: TrainConfig, flows: FlowSource):
    """Training tuples for every step of one episode."""
    frames = ep.frames["main"]
    T = ep.n_steps
    targets = action_targets(ep.actions, ep.proprio, ep.task.a_max)
    fut_cache = {}

    def future(k):
        if k not in fut_cache:
            mask = ep.mask_at(k) if k < T else None
            fut_cache[k] = object_future_feature(frames[k], mask) if mask is not None else (np.zeros(DESC_DIM), False)
        return fut_cache[k]

    xs, acts, futs, valid = [], [], [], []
    for t in range(T):
        maps = [flows.get(ep_id, frames, s, e) for s, e in history_pairs(t, cfg.h, cfg.history_stride)]
        xs.append(build_input(frames[t], ep.proprio[t], maps))
        idx = np.minimum(np.arange(t, t + cfg.K), T - 1)
        acts.append(targets[idx])
        fs = [future(t + cfg.future_stride * i) for i in range(1, cfg.N + 1)]
        futs.append(np.array([f for f, _ in fs]).reshape(cfg.N, DESC_DIM))
        valid.append(np.array([ok for _, ok in fs], bool))
    return np.array(xs), np.array(acts), np.array(futs), np.array(valid)


def episode_id(ep) -> str:
    """Content-derived id, so memoised flows never leak between datasets."""
    return hashlib.sha256(ep.frames["main"].tobytes()).hexdigest()[:20]


def build_dataset(episodes, cfg: TrainConfig, flows: FlowSource = None, ids=None) -> net.Batch:
    flows = FlowSource() if flows is None else flows
    ids = ids or [episode_id(ep) for ep in episodes]
    parts = [episode_samples(ep, i, cfg, flows) for ep, i in zip(episodes, ids)]
    return net.Batch(*(np.concatenate([p[j] for p in parts]) for j in range(4)))


# --- optimisation ------------------------------------------------------------------


class AdamW:
    def __init__(self, arrays: dict, beta1=0.9, beta2=0.95, weight_decay=1e-8, eps=1e-8):
        self.b1, self.b2, self.wd, self.eps = beta1, beta2, weight_decay, eps
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0

    def step(self, arrays: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in arrays.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= lr * self.wd * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_at(step: int, total: int, base: float, warmup_frac: float) -> float:
    warm = max(int(round(warmup_frac * total)), 1)
    if step < warm:
        return base * (step + 1) / warm
    progress = (step - warm) / max(total - warm, 1)
    return base * 0.5 * (1 + math.cos(math.pi * min(progress, 1.0)))


@dataclass
class TrainResult:
    params: net.PolicyParams
    curve: list = field(default_factory=list)  # dict rows: step, loss_total, loss_action, loss_world, lr
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def train_on_batch(data: net.Batch, cfg: TrainConfig, action_dim: int) -> TrainResult:
    if len(data) == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    params = net.init_params(data.x.shape[1], cfg.K, action_dim, cfg.N, cfg.hidden, rng=rng)
    params.in_mean = data.x.mean(axis=0)
    params.in_std = np.maximum(data.x.std(axis=0), STD_FLOOR)
    arrays = params.arrays()
    opt = AdamW(arrays, cfg.beta1, cfg.beta2, cfg.weight_decay)
    n = len(data)
    per_epoch = max(n // cfg.batch_size, 1)
    total = per_epoch * cfg.epochs
    init_total, init_a, init_w = net.batch_loss(params, data, cfg.lam)
    curve = [{"step": 0, "loss_total": init_total, "loss_action": init_a, "loss_world": init_w, "lr": 0.0}]
    acc = np.zeros(3)
    count = 0
    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b in range(per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = net.Batch(data.x[idx], data.actions[idx], data.futures[idx], data.valid[idx])
            grads, losses = net.grad(params, batch, cfg.lam)
            lr = lr_at(step, total, cfg.lr, cfg.warmup_frac)
            opt.step(arrays, grads, lr)
            step += 1
            acc += losses
            count += 1
            if step % cfg.log_every == 0 or step == total:
                mean = acc / count
                curve.append({"step": step, "loss_total": mean[0], "loss_action": mean[1], "loss_world": mean[2], "lr": lr})
                acc[:] = 0
                count = 0
    final_total, _, _ = net.batch_loss(params, data, cfg.lam)
    params.meta = {"h": cfg.h, "history_stride": cfg.history_stride, "future_stride": cfg.future_stride,
                   "replan_every": cfg.replan_every}
    return TrainResult(params, curve, init_total, final_total)


def train_bc(episodes, cfg: TrainConfig, flows: FlowSource = None) -> TrainResult:
    episodes = list(episodes)
    if not episodes:
        raise ValueError("empty dataset")
    data = build_dataset(episodes, cfg, flows)
    return train_on_batch(data, cfg, episodes[0].task.n_arms * 3)


# --- persistence ---------------------------------------------------------------------

_CONFIG_FIELDS = ("K", "h", "N", "d", "hidden", "history_stride", "future_stride", "action_dim", "input_dim", "replan_every")


def save_checkpoint(path, params: net.PolicyParams) -> None:
    meta = params.meta
    values = {
        "K": params.K,
        "h": meta.get("h", 0),
        "N": params.N,
        "d": params.feat_dim,
        "hidden": params.hidden,
        "history_stride": meta.get("history_stride", 1),
        "future_stride": meta.get("future_stride", 1),
        "action_dim": params.action_dim,
        "input_dim": params.input_dim,
        "replan_every": meta.get("replan_every", 5),
    }
    out = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack("<I", len(_CONFIG_FIELDS))]
    out.append(struct.pack(f"<{len(_CONFIG_FIELDS)}I", *(int(values[k]) for k in _CONFIG_FIELDS)))
    for arr in list(params.arrays().values()) + [params.in_mean, params.in_std]:
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    from ..flow import _atomic_write

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, b"".join(out))


def load_checkpoint(path) -> net.PolicyParams:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError("not a policy checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", data, 8)
    cfg = dict(zip(_CONFIG_FIELDS, struct.unpack_from(f"<{count}I", data, 12)))
    off = 12 + 4 * count
    H, D, KA, N, d = cfg["hidden"], cfg["input_dim"], cfg["K"] * cfg["action_dim"], cfg["N"], cfg["d"]
    shapes = {"w1": (H, D), "b1": (H,), "w2": (KA, H), "b2": (KA,), "queries": (N, H), "wz": (d, H), "bz": (d,)}
    arrays = {}
    for name in net.PARAM_ORDER + ("in_mean", "in_std"):
        shape = shapes.get(name, (D,))
        n = int(np.prod(shape))
        if off + 8 * n > len(data):
            raise ValueError(f"checkpoint truncated in {name}")
        arrays[name] = np.frombuffer(data, "<f8", n, off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    meta = {k: cfg[k] for k in ("h", "history_stride", "future_stride", "replan_every")}
    return net.PolicyParams(K=cfg["K"], action_dim=cfg["action_dim"], meta=meta, **arrays)


def write_loss_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["step", "loss_total", "loss_action", "loss_world", "lr"], lineterminator="\n")
        w.writeheader()
        for row in curve:
            w.writerow(row)
