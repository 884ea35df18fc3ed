"""Deterministic patch descriptors standing in for a frozen visual encoder,
masked average pooling of them, and the flow-map summary fed to the policy."""
from __future__ import annotations

import numpy as np

PATCH = 8
N_BINS = 8
DESC_DIM = N_BINS + 1
FLOW_GRID = 2  # flow-map descriptors are average-pooled onto a FLOW_GRID x FLOW_GRID grid


def _pad_to_patches(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    ph, pw = -h % PATCH, -w % PATCH
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    return img


def patch_features(frame: np.ndarray) -> np.ndarray:
    """(ceil(H/8), ceil(W/8), 9): per 8x8 patch an L2-normalised 8-bin
    gradient-orientation histogram followed by the mean intensity / 255."""
    frame = np.asarray(frame)
    if frame.ndim != 2 or min(frame.shape) < 16:
        raise ValueError("frame must be a 2-D grid of at least 16x16")
    img = _pad_to_patches(frame.astype(np.float64) / 255.0)
    h, w = img.shape
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % (2 * np.pi)
    bins = np.minimum((ang / (2 * np.pi / N_BINS)).astype(int), N_BINS - 1)
    gh, gw = h // PATCH, w // PATCH
    patch_id = (np.arange(h)[:, None] // PATCH) * gw + np.arange(w)[None, :] // PATCH
    hist = np.bincount(
        (patch_id * N_BINS + bins).ravel(), weights=mag.ravel(), minlength=gh * gw * N_BINS
    ).reshape(gh, gw, N_BINS)
    norm = np.linalg.norm(hist, axis=-1, keepdims=True)
    hist = np.divide(hist, norm, out=np.zeros_like(hist), where=norm > 1e-12)
    mean = img.reshape(gh, PATCH, gw, PATCH).mean(axis=(1, 3))
    return np.concatenate([hist, mean[..., None]], axis=-1)


def object_future_feature(frame: np.ndarray, mask: np.ndarray):
    """Mean descriptor over patches more than half covered by ``mask``.

    Returns ``(feature, valid)``; an empty selection gives zeros and False.
    """
    frame = np.asarray(frame)
    mask = np.asarray(mask)
    if frame.shape != mask.shape:
        raise ValueError(f"mask {mask.shape} does not match frame {frame.shape}")
    desc = patch_features(frame)
    m = _pad_to_patches((mask > 0).astype(np.float64))
    gh, gw = desc.shape[:2]
    cover = m.reshape(gh, PATCH, gw, PATCH).mean(axis=(1, 3))
    sel = cover > 0.5
    if not sel.any():
        return np.zeros(DESC_DIM), False
    return desc[sel].mean(axis=0), True


def _pool(grid: np.ndarray, cells: int) -> np.ndarray:
    rows = np.array_split(np.arange(grid.shape[0]), cells)
    cols = np.array_split(np.arange(grid.shape[1]), cells)
    return np.array([[grid[r][:, c].mean(axis=(0, 1)) for c in cols] for r in rows])


def flow_map_features(rgb: np.ndarray, cells: int = FLOW_GRID) -> np.ndarray:
    """Patch descriptors of each colour channel, pooled onto a coarse
    ``cells`` x ``cells`` grid, concatenated and flattened."""
    return np.concatenate([_pool(patch_features(rgb[..., c]), cells).ravel() for c in range(3)])


def flow_feature_dim(cells: int = FLOW_GRID) -> int:
    return 3 * cells * cells * DESC_DIM


def frame_feature_dim(resolution) -> int:
    w, h = resolution
    return -(-h // PATCH) * -(-w // PATCH) * DESC_DIM
