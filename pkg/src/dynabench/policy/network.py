"""Shared tanh trunk with an action-chunk head and a world-query head, the
training losses and their hand-derived gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import DESC_DIM

COS_EPS = 1e-12

# order in which arrays are stored in checkpoints
PARAM_ORDER = ("w1", "b1", "w2", "b2", "queries", "wz", "bz")


@dataclass
class PolicyParams:
    """Weights plus the fixed input normalisation.

    hidden = tanh(w1 @ ((x - in_mean) / in_std) + b1)
    actions = w2 @ hidden + b2                       -> (K, action_dim)
    z_i = wz @ (queries[i] * hidden) + bz           -> (N, feat_dim)
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    queries: np.ndarray
    wz: np.ndarray
    bz: np.ndarray
    K: int
    action_dim: int
    in_mean: np.ndarray = None
    in_std: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.w1.shape[1]
        if self.in_mean is None:
            self.in_mean = np.zeros(d)
        if self.in_std is None:
            self.in_std = np.ones(d)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def N(self) -> int:
        return self.queries.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.wz.shape[0]

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_ORDER}

    def copy(self) -> "PolicyParams":
        kw = {k: v.copy() for k, v in self.arrays().items()}
        return PolicyParams(**kw, K=self.K, action_dim=self.action_dim, in_mean=self.in_mean.copy(),
                            in_std=self.in_std.copy(), meta=dict(self.meta))

    def with_arrays(self, arrays: dict) -> "PolicyParams":
        p = self.copy()
        for k, v in arrays.items():
            setattr(p, k, v)
        return p


def init_params(input_dim, K, action_dim, N, hidden=64, feat_dim=DESC_DIM, rng=None, scale=1.0) -> PolicyParams:
    rng = np.random.default_rng(0) if rng is None else rng
    lim1 = np.sqrt(6.0 / (input_dim + hidden))
    lim2 = np.sqrt(6.0 / (hidden + K * action_dim))
    return PolicyParams(
        w1=rng.uniform(-lim1, lim1, (hidden, input_dim)) * scale,
        b1=np.zeros(hidden),
        w2=rng.uniform(-lim2, lim2, (K * action_dim, hidden)) * scale,
        b2=np.zeros(K * action_dim),
        queries=rng.normal(0.0, 1.0, (max(N, 0), hidden)) * scale,
        wz=rng.normal(0.0, 1.0 / np.sqrt(hidden), (feat_dim, hidden)) * scale,
        bz=np.zeros(feat_dim),
        K=K,
        action_dim=action_dim,
    )


def zero_params(input_dim, K, action_dim, N, hidden=64, feat_dim=DESC_DIM) -> PolicyParams:
    return init_params(input_dim, K, action_dim, N, hidden, feat_dim, scale=0.0)


def _check(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input width {x.shape[-1]} != {params.input_dim}")
    return x


def _trunk(params: PolicyParams, x: np.ndarray):
    xn = (x - params.in_mean) / params.in_std
    return xn, np.tanh(xn @ params.w1.T + params.b1)


def forward(params: PolicyParams, x: np.ndarray):
    """``x`` is (D,) or (B, D). Returns (actions (B, K, A), z (B, N, d))."""
    x = _check(params, x)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    _, h = _trunk(params, xb)
    actions = (h @ params.w2.T + params.b2).reshape(len(xb), params.K, params.action_dim)
    z = (h[:, None, :] * params.queries[None]) @ params.wz.T + params.bz
    if single:
        return actions[0], z[0]
    return actions, z


def forward_actions(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    """Action chunk only; the world head is never evaluated at inference."""
    x = _check(params, x)
    _, h = _trunk(params, np.atleast_2d(x))
    out = (h @ params.w2.T + params.b2).reshape(-1, params.K, params.action_dim)
    return out[0] if x.ndim == 1 else out


# --- losses --------------------------------------------------------------------


def loss_action(pred, target, K=None) -> float:
    """(1/K) * sum_i ||pred_i - target_i||_1 for one chunk (K, A)."""
    pred = np.asarray(pred, dtype=float).reshape(-1, np.shape(pred)[-1])
    target = np.asarray(target, dtype=float).reshape(pred.shape)
    K = len(pred) if K is None else K
    return float(np.abs(pred - target).sum() / K)


def _cosines(z, f, valid):
    nz = np.linalg.norm(z, axis=-1)
    nf = np.linalg.norm(f, axis=-1)
    ok = np.asarray(valid, bool) & (nz > COS_EPS) & (nf > COS_EPS)
    denom = np.where(ok, nz * nf, 1.0)
    cos = np.where(ok, np.sum(z * f, axis=-1) / denom, 0.0)
    return cos, ok, nz, nf


def loss_world(z, f, valid_mask=None, N=None) -> float:
    """Mean cosine distance over valid slots (0 if none are valid)."""
    z = np.asarray(z, dtype=float)
    f = np.asarray(f, dtype=float)
    valid = np.ones(z.shape[:-1], bool) if valid_mask is None else np.asarray(valid_mask, bool)
    cos, ok, _, _ = _cosines(z, f, valid)
    n = ok.sum()
    return float(np.sum(np.where(ok, 1.0 - cos, 0.0)) / n) if n else 0.0


def loss_total(action_loss: float, world_loss: float, lam: float) -> float:
    return action_loss + lam * world_loss


@dataclass
class Batch:
    x: np.ndarray  # (B, D)
    actions: np.ndarray  # (B, K, A)
    futures: np.ndarray  # (B, N, d)
    valid: np.ndarray  # (B, N) bool

    def __len__(self):
        return len(self.x)


def batch_loss(params: PolicyParams, batch: Batch, lam: float):
    """Returns (total, action, world). The action term is averaged over
    samples; the world term over every valid future slot in the batch."""
    actions, z = forward(params, batch.x)
    la = np.abs(actions - batch.actions).sum() / (params.K * len(batch))
    lw = loss_world(z, batch.futures, batch.valid) if params.N else 0.0
    return la + lam * lw, la, lw


def grad(params: PolicyParams, batch: Batch, lam: float):
    """Analytic gradient of ``batch_loss`` total. Returns (grads dict, losses)."""
    x = _check(params, batch.x)
    B = len(x)
    xn, h = _trunk(params, x)
    y = h @ params.w2.T + params.b2
    diff = y - batch.actions.reshape(B, -1)
    la = np.abs(diff).sum() / (params.K * B)
    dy = np.sign(diff) / (params.K * B)

    g = {
        "w2": dy.T @ h,
        "b2": dy.sum(axis=0),
    }
    dh = dy @ params.w2

    lw = 0.0
    N = params.N
    if N:
        u = h[:, None, :] * params.queries[None]  # (B, N, H)
        z = u @ params.wz.T + params.bz  # (B, N, d)
        cos, ok, nz, nf = _cosines(z, batch.futures, batch.valid)
        n_ok = int(ok.sum())
        dz = np.zeros_like(z)
        if n_ok:
            lw = float(np.sum(np.where(ok, 1.0 - cos, 0.0)) / n_ok)
            nzs = np.where(ok, nz, 1.0)[..., None]
            nfs = np.where(ok, nf, 1.0)[..., None]
            dcos = batch.futures / (nzs * nfs) - cos[..., None] * z / nzs**2
            dz = np.where(ok[..., None], -dcos, 0.0) * (lam / n_ok)
        g["wz"] = np.einsum("bnd,bnh->dh", dz, u)
        g["bz"] = dz.sum(axis=(0, 1))
        du = dz @ params.wz  # (B, N, H)
        g["queries"] = np.einsum("bnh,bh->nh", du, h)
        dh = dh + np.einsum("bnh,nh->bh", du, params.queries)
    else:
        g["wz"] = np.zeros_like(params.wz)
        g["bz"] = np.zeros_like(params.bz)
        g["queries"] = np.zeros_like(params.queries)

    da = dh * (1.0 - h * h)
    g["w1"] = da.T @ xn
    g["b1"] = da.sum(axis=0)
    return g, (la + lam * lw, la, lw)
