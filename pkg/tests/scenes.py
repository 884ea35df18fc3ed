"""Synthetic frames and trajectories shared by the tests."""
import numpy as np

DISCS = [  # (cx, cy, radius, intensity) in pixels
    (20.0, 22.0, 8.0, 220.0),
    (44.0, 18.0, 6.0, 160.0),
    (32.0, 40.0, 10.0, 250.0),
    (16.0, 48.0, 7.0, 120.0),
    (50.0, 46.0, 7.5, 190.0),
]


def disc_scene(dx: float = 0.0, dy: float = 0.0, size: int = 64, edge: float = 1.5) -> np.ndarray:
    """Smooth-edged discs translated by (dx, dy) pixels, as u8."""
    rows, cols = np.mgrid[0:size, 0:size].astype(float)
    img = np.full((size, size), 20.0)
    for cx, cy, r, val in DISCS:
        d = np.hypot(cols - cx - dx, rows - cy - dy)
        img += (val - 20.0) / (1.0 + np.exp((d - r) / edge))
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def interior(a: np.ndarray, margin: int = 8) -> np.ndarray:
    return a[margin:-margin, margin:-margin]


def line(start, v, duration=20.0):
    from dynabench.trajectories import DynamicsLevel, TrajectorySpec, constant_velocity_segment

    return TrajectorySpec(DynamicsLevel.LEVEL1, [constant_velocity_segment(start, v, duration)])


def static(p):
    return line(p, (0.0, 0.0))
