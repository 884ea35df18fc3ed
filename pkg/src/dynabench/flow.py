"""Dense optical flow (Farneback polynomial expansion), HSV flow maps and a
content-addressed disk cache for them."""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

DIGEST_ALGORITHM = "sha256"
CACHE_MAGIC = b"DFC1"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    window: int = 9
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1
    mag_percentile: float = 95.0
    zero_threshold: float = 0.1

    def __post_init__(self):
        if min(self.pyramid_levels, self.window, self.iterations, self.poly_n) < 1 or self.poly_sigma <= 0:
            raise ValueError("flow parameters must be positive")
        if not 0 < self.mag_percentile <= 100:
            raise ValueError("mag_percentile must be in (0, 100]")
        if self.zero_threshold < 0:
            raise ValueError("zero_threshold must be >= 0")

    def digest(self) -> str:
        return hashlib.sha256(repr(astuple(self)).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    @property
    def shape(self):
        return self.u.shape

    def as_array(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=-1)


# --- polynomial expansion ----------------------------------------------------


def _poly_basis(poly_n: int, sigma: float):
    """1-D kernels and the inverse Gram matrix of the weighted quadratic fit."""
    n = poly_n // 2 if poly_n > 1 else 1
    x = np.arange(-n, n + 1, dtype=float)
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    # basis order: 1, x, y, x^2, y^2, xy
    X, Y = np.meshgrid(x, x)
    B = np.stack([np.ones_like(X), X, Y, X**2, Y**2, X * Y], axis=-1).reshape(-1, 6)
    w = np.outer(g, g).ravel()
    gram = B.T @ (w[:, None] * B)
    return g, x * g, x * x * g, np.linalg.inv(gram)


def _poly_expand(img: np.ndarray, basis) -> np.ndarray:
    """Per-pixel quadratic model; returns (H, W, 5) = bx, by, axx, ayy, axy
    with f(p) ~ p^T A p + b^T p + c and A = [[axx, axy/2], [axy/2, ayy]]."""
    g, xg, xxg, ginv = basis
    c = ndimage.correlate1d
    r0 = c(img, g, axis=1, mode="nearest")
    r1 = c(img, xg, axis=1, mode="nearest")
    r2 = c(img, xxg, axis=1, mode="nearest")
    proj = np.stack(
        [
            c(r0, g, axis=0, mode="nearest"),
            c(r1, g, axis=0, mode="nearest"),
            c(r0, xg, axis=0, mode="nearest"),
            c(r2, g, axis=0, mode="nearest"),
            c(r0, xxg, axis=0, mode="nearest"),
            c(r1, xg, axis=0, mode="nearest"),
        ],
        axis=-1,
    )
    coef = proj @ ginv.T
    return coef[..., 1:]


def _resample(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup of a (H, W, C) array at fractional coordinates, clamped."""
    h, w = arr.shape[:2]
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    r0 = np.minimum(np.floor(rows).astype(int), h - 2 if h > 1 else 0)
    c0 = np.minimum(np.floor(cols).astype(int), w - 2 if w > 1 else 0)
    fr = (rows - r0)[..., None]
    fc = (cols - c0)[..., None]
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    top = arr[r0, c0] * (1 - fc) + arr[r0, c1] * fc
    bot = arr[r1, c0] * (1 - fc) + arr[r1, c1] * fc
    return top * (1 - fr) + bot * fr


def _pyramid_level(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    h, w = img.shape
    blurred = ndimage.gaussian_filter(img, 0.5 * (factor - 1), mode="nearest")
    nh, nw = max(h // factor, 1), max(w // factor, 1)
    rows = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    cols = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    R, C = np.meshgrid(rows, cols, indexing="ij")
    return _resample(blurred[..., None], R, C)[..., 0]


def _upsample_flow(flow: np.ndarray, shape) -> np.ndarray:
    h, w = shape
    ch, cw = flow.shape[:2]
    rows = (np.arange(h) + 0.5) * (ch / h) - 0.5
    cols = (np.arange(w) + 0.5) * (cw / w) - 0.5
    R, C = np.meshgrid(rows, cols, indexing="ij")
    up = _resample(flow, R, C)
    up[..., 0] *= w / cw
    up[..., 1] *= h / ch
    return up


def _refine(p1: np.ndarray, p2: np.ndarray, flow: np.ndarray, window: int) -> np.ndarray:
    h, w = flow.shape[:2]
    R, C = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    warped = _resample(p2, R + flow[..., 1], C + flow[..., 0])
    axx = 0.5 * (p1[..., 2] + warped[..., 2])
    ayy = 0.5 * (p1[..., 3] + warped[..., 3])
    axy = 0.25 * (p1[..., 4] + warped[..., 4])
    dbx = -0.5 * (warped[..., 0] - p1[..., 0]) + axx * flow[..., 0] + axy * flow[..., 1]
    dby = -0.5 * (warped[..., 1] - p1[..., 1]) + axy * flow[..., 0] + ayy * flow[..., 1]
    m = np.stack(
        [
            axx * axx + axy * axy,
            axy * (axx + ayy),
            ayy * ayy + axy * axy,
            axx * dbx + axy * dby,
            axy * dbx + ayy * dby,
        ],
        axis=-1,
    )
    m = ndimage.uniform_filter(m, size=(window, window, 1), mode="nearest")
    g11, g12, g22, h1, h2 = np.moveaxis(m, -1, 0)
    idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3)
    return np.stack([(g22 * h1 - g12 * h2) * idet, (g11 * h2 - g12 * h1) * idet], axis=-1)


def dense_flow(prev: np.ndarray, nxt: np.ndarray, params: FlowParams = FlowParams()) -> FlowField:
    """Displacement (pixels) taking ``prev`` to ``nxt``: u along columns, v along rows."""
    prev = np.asarray(prev)
    nxt = np.asarray(nxt)
    if prev.shape != nxt.shape or prev.ndim != 2:
        raise ValueError(f"frames must be equal 2-D grids, got {prev.shape} and {nxt.shape}")
    if min(prev.shape) < 16:
        raise ValueError("frames must be at least 16x16")
    a = prev.astype(np.float64)
    b = nxt.astype(np.float64)
    basis = _poly_basis(params.poly_n, params.poly_sigma)
    flow = None
    for level in reversed(range(params.pyramid_levels)):
        factor = 2**level
        if min(prev.shape) // factor < 4:
            continue
        la, lb = _pyramid_level(a, factor), _pyramid_level(b, factor)
        p1, p2 = _poly_expand(la, basis), _poly_expand(lb, basis)
        if flow is None:
            flow = np.zeros(la.shape + (2,))
        elif flow.shape[:2] != la.shape:
            flow = _upsample_flow(flow, la.shape)
        for _ in range(params.iterations):
            flow = _refine(p1, p2, flow, params.window)
    return FlowField(flow[..., 0].astype(np.float32), flow[..., 1].astype(np.float32))


# --- HSV encoding --------------------------------------------------------------


def _hsv_to_rgb(hue_deg: np.ndarray, value: np.ndarray) -> np.ndarray:
    """Saturation fixed at 1."""
    hp = (hue_deg % 360.0) / 60.0
    x = value * (1.0 - np.abs(hp % 2.0 - 1.0))
    c = value
    z = np.zeros_like(value)
    sector = np.floor(hp).astype(int) % 6
    choices = [
        np.stack([c, x, z], -1),
        np.stack([x, c, z], -1),
        np.stack([z, c, x], -1),
        np.stack([z, x, c], -1),
        np.stack([x, z, c], -1),
        np.stack([c, z, x], -1),
    ]
    out = np.zeros(value.shape + (3,))
    for s in range(6):
        out[sector == s] = choices[s][sector == s]
    return out


def flow_to_rgb(field: FlowField, params: FlowParams = FlowParams()) -> np.ndarray:
    """(H, W, 3) uint8: hue is direction, value is percentile-normalised magnitude."""
    u = np.asarray(field.u, dtype=np.float64)
    v = np.asarray(field.v, dtype=np.float64)
    mag = np.hypot(u, v)
    ref = float(np.percentile(mag, params.mag_percentile))
    if ref < params.zero_threshold or ref == 0.0:
        return np.zeros(u.shape + (3,), dtype=np.uint8)
    hue = np.degrees(np.arctan2(v, u)) % 360.0
    value = np.clip(mag / ref, 0.0, 1.0)
    rgb = _hsv_to_rgb(hue, value)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def flow_history(frames, params: FlowParams = FlowParams()) -> list:
    """Flow maps of consecutive frame pairs, oldest pair first."""
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    return [flow_to_rgb(dense_flow(a, b, params), params) for a, b in zip(frames[:-1], frames[1:])]


# --- cache -----------------------------------------------------------------------


@dataclass(frozen=True)
class FlowCacheKey:
    dataset: str
    trajectory_id: str
    step: int
    offsets: tuple
    view: str
    resolution: tuple

    def canonical(self) -> str:
        offsets = ",".join(str(int(o)) for o in self.offsets)
        w, h = self.resolution
        return (
            f"dataset={self.dataset}|traj={self.trajectory_id}|step={int(self.step)}"
            f"|offsets={offsets}|view={self.view}|res={int(w)}x{int(h)}"
        )

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


def encode_payload(rgb: np.ndarray) -> bytes:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, ch = rgb.shape
    return _HEADER.pack(CACHE_MAGIC, w, h, ch) + rgb.tobytes()


def decode_payload(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ValueError("payload shorter than header")
    magic, w, h, ch = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC or ch != 3:
        raise ValueError("bad cache magic")
    if len(data) != _HEADER.size + w * h * ch:
        raise ValueError("cache payload size mismatch")
    return np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(h, w, ch).copy()


class FlowCache:
    """Directory of flow maps named by key digest. Writes are atomic
    (temp file + rename), so concurrent readers never see partial files."""

    def __init__(self, root, params: FlowParams = FlowParams()):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.params = params
        meta = self.root / "meta.txt"
        text = f"digest={DIGEST_ALGORITHM}\nparams={params.digest()}\nformat={CACHE_MAGIC.decode()}\n"
        if meta.exists():
            if meta.read_text() != text:
                raise ValueError(f"cache at {self.root} was built with different settings")
        else:
            _atomic_write(meta, text.encode())
        self.hits = 0
        self.misses = 0

    def path_for(self, key: FlowCacheKey) -> Path:
        return self.root / f"{key.digest}.dfc"

    def get_or_compute(self, key: FlowCacheKey, compute: Callable[[], np.ndarray]) -> np.ndarray:
        path = self.path_for(key)
        try:
            rgb = decode_payload(path.read_bytes())
            self.hits += 1
            return rgb
        except (OSError, ValueError):
            pass
        self.misses += 1
        rgb = np.ascontiguousarray(compute(), dtype=np.uint8)
        _atomic_write(path, encode_payload(rgb))
        return rgb


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def default_cache_dir() -> Path:
    return Path(os.environ.get("DYNABENCH_CACHE", Path.home() / ".cache" / "dynabench" / "flow"))
