"""Target motion models for the three dynamics levels.

Level 1 moves with constant velocity, Level 2 follows a polynomial through
random control points, Level 3 chains 2-3 independent Level 1/2 pieces with
Dirichlet-distributed durations. Everything is planar and a pure value type.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class DynamicsLevel(enum.IntEnum):
    LEVEL1 = 1
    LEVEL2 = 2
    LEVEL3 = 3


class SegmentKind(str, enum.Enum):
    CONSTANT_VELOCITY = "constant_velocity"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True, eq=False)
class Segment:
    """One piece of a target trajectory.

    A constant-velocity segment moves from ``start`` with ``velocity``. A
    polynomial segment evaluates ``sum_k coeffs[k] * (tau / t_traj) ** k``
    for local time ``tau``; ``coeffs[0]`` is its start point. ``duration`` may
    be shorter than ``t_traj`` (only the first part of the curve is used).
    """

    kind: SegmentKind
    duration: float
    start: np.ndarray
    velocity: Optional[np.ndarray] = None
    coeffs: Optional[np.ndarray] = None
    t_traj: Optional[float] = None

    @property
    def degree(self) -> int:
        return 1 if self.coeffs is None else len(self.coeffs) - 1

    def local_position(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.kind is SegmentKind.CONSTANT_VELOCITY:
            return self.start + tau[..., None] * self.velocity
        s = tau / self.t_traj
        powers = s[..., None] ** np.arange(len(self.coeffs))
        return powers @ self.coeffs

    def local_velocity(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.kind is SegmentKind.CONSTANT_VELOCITY:
            return np.broadcast_to(self.velocity, tau.shape + (2,)).copy()
        n = len(self.coeffs) - 1
        s = tau / self.t_traj
        k = np.arange(1, n + 1)
        powers = s[..., None] ** (k - 1)
        return (powers * k) @ self.coeffs[1:] / self.t_traj

    def end_position(self) -> np.ndarray:
        return self.local_position(np.float64(self.duration))

    def translated(self, delta: np.ndarray) -> "Segment":
        if self.kind is SegmentKind.CONSTANT_VELOCITY:
            return replace(self, start=self.start + delta)
        coeffs = self.coeffs.copy()
        coeffs[0] = coeffs[0] + delta
        return replace(self, start=coeffs[0].copy(), coeffs=coeffs)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "duration": self.duration, "start": self.start.tolist()}
        if self.kind is SegmentKind.CONSTANT_VELOCITY:
            out["velocity"] = self.velocity.tolist()
        else:
            out["coeffs"] = self.coeffs.tolist()
            out["t_traj"] = self.t_traj
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        kind = SegmentKind(d["kind"])
        if kind is SegmentKind.CONSTANT_VELOCITY:
            return constant_velocity_segment(d["start"], d["velocity"], d["duration"])
        return polynomial_segment(d["coeffs"], d["t_traj"], d["duration"])


def constant_velocity_segment(start, velocity, duration) -> Segment:
    return Segment(
        SegmentKind.CONSTANT_VELOCITY,
        float(duration),
        np.asarray(start, dtype=float).reshape(2),
        velocity=np.asarray(velocity, dtype=float).reshape(2),
    )


def polynomial_segment(coeffs, t_traj, duration=None) -> Segment:
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1, 2)
    if not 2 <= len(coeffs) - 1 <= 5:
        raise ValueError(f"polynomial degree must be in [2, 5], got {len(coeffs) - 1}")
    duration = t_traj if duration is None else duration
    return Segment(
        SegmentKind.POLYNOMIAL, float(duration), coeffs[0].copy(), coeffs=coeffs, t_traj=float(t_traj)
    )


@dataclass(frozen=True, eq=False)
class TrajectorySpec:
    level: DynamicsLevel
    segments: tuple
    origin_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "origin_offset", np.asarray(self.origin_offset, dtype=float).reshape(2))
        object.__setattr__(self, "_bounds", np.cumsum([0.0] + [s.duration for s in self.segments]))

    @property
    def total_duration(self) -> float:
        return float(self._bounds[-1])

    @property
    def boundaries(self) -> np.ndarray:
        return self._bounds

    def validate(self, tol: float = 1e-9) -> None:
        kinds = [s.kind for s in self.segments]
        if self.level is DynamicsLevel.LEVEL1 and kinds != [SegmentKind.CONSTANT_VELOCITY]:
            raise ValueError("Level 1 spec needs exactly one constant-velocity segment")
        if self.level is DynamicsLevel.LEVEL2 and kinds != [SegmentKind.POLYNOMIAL]:
            raise ValueError("Level 2 spec needs exactly one polynomial segment")
        if self.level is DynamicsLevel.LEVEL3 and not 2 <= len(kinds) <= 3:
            raise ValueError("Level 3 spec needs 2 or 3 segments")
        if any(s.duration <= 0 for s in self.segments):
            raise ValueError("segment durations must be positive")
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            gap = np.linalg.norm(a.end_position() - b.start)
            if gap > tol:
                raise ValueError(f"position gap {gap:.3g} m at segment junction")

    def __eq__(self, other):
        if not isinstance(other, TrajectorySpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        return {
            "level": int(self.level),
            "origin_offset": self.origin_offset.tolist(),
            "segments": [s.to_dict() for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        return cls(
            DynamicsLevel(d["level"]),
            [Segment.from_dict(s) for s in d["segments"]],
            np.asarray(d["origin_offset"], dtype=float),
        )


@dataclass(frozen=True)
class SamplerConfig:
    alpha: float
    v_min: Optional[float] = None
    workspace: tuple = (-0.3, -0.3, 0.3, 0.3)
    dirichlet_concentration: float = 1.0
    rng_seed: int = 0
    duration: float = 10.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.speed_floor > self.alpha:
            raise ValueError("v_min must not exceed alpha")
        x0, y0, x1, y1 = self.workspace
        if not (x1 > x0 and y1 > y0):
            raise ValueError("workspace must be a nonempty rectangle")
        if self.dirichlet_concentration <= 0:
            raise ValueError("dirichlet_concentration must be positive")

    @property
    def speed_floor(self) -> float:
        return 0.2 * self.alpha if self.v_min is None else self.v_min

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def _uniform_point(rng, workspace) -> np.ndarray:
    x0, y0, x1, y1 = workspace
    return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])


def _cv_piece(cfg: SamplerConfig, rng, start, duration) -> Segment:
    if cfg.alpha == 0:
        return constant_velocity_segment(start, (0.0, 0.0), duration)
    speed = rng.uniform(cfg.speed_floor, cfg.alpha)
    heading = rng.uniform(0.0, 2 * np.pi)
    return constant_velocity_segment(start, speed * np.array([np.cos(heading), np.sin(heading)]), duration)


def _poly_piece(cfg: SamplerConfig, rng, duration, truncate: bool) -> Segment:
    n = int(rng.integers(2, 6))
    points = np.stack([_uniform_point(rng, cfg.workspace) for _ in range(n + 1)])
    coeffs = interpolate_control_points(points)
    if cfg.alpha == 0:
        coeffs[1:] = 0.0
        return polynomial_segment(coeffs, duration)
    seg = polynomial_segment(coeffs, duration)
    peak = _segment_peak_speed(seg, whole_curve=True)
    t_traj = duration
    if peak > cfg.alpha:
        # stretch time so the whole curve respects the cap; tiny margin for round-off
        t_traj = duration * peak / cfg.alpha * (1 + 1e-9)
    return polynomial_segment(coeffs, t_traj, duration if truncate else t_traj)


def interpolate_control_points(points) -> np.ndarray:
    """Coefficients b_0..b_n of the polynomial through ``points`` at knots j/n."""
    points = np.asarray(points, dtype=float)
    n = len(points) - 1
    knots = np.arange(n + 1) / n
    vander = np.vander(knots, n + 1, increasing=True)
    coeffs = np.linalg.solve(vander, points)
    assert np.all(np.isfinite(coeffs)), "interpolation system is singular"
    return coeffs


def sample_level1(cfg: SamplerConfig, duration: Optional[float] = None, rng=None) -> TrajectorySpec:
    rng = cfg.rng() if rng is None else rng
    duration = cfg.duration if duration is None else duration
    start = _uniform_point(rng, cfg.workspace)
    return TrajectorySpec(DynamicsLevel.LEVEL1, [_cv_piece(cfg, rng, start, duration)])


def sample_level2(cfg: SamplerConfig, duration: Optional[float] = None, rng=None) -> TrajectorySpec:
    """Polynomial target; if the fitted curve is too fast it is slowed down
    uniformly, so ``total_duration`` can exceed ``duration``."""
    rng = cfg.rng() if rng is None else rng
    duration = cfg.duration if duration is None else duration
    if duration <= 0:
        raise ValueError("duration must be positive")
    return TrajectorySpec(DynamicsLevel.LEVEL2, [_poly_piece(cfg, rng, duration, truncate=False)])


def sample_level3(cfg: SamplerConfig, duration: Optional[float] = None, rng=None) -> TrajectorySpec:
    rng = cfg.rng() if rng is None else rng
    duration = cfg.duration if duration is None else duration
    if duration <= 0:
        raise ValueError("duration must be positive")
    count = int(rng.integers(2, 4))
    parts = rng.dirichlet(np.full(count, cfg.dirichlet_concentration)) * duration
    # a Dirichlet draw can underflow to 0 for small concentrations
    parts = np.maximum(parts, 1e-6)
    parts *= duration / parts.sum()
    segments = []
    cursor = _uniform_point(rng, cfg.workspace)
    for piece in parts:
        if rng.random() < 0.5:
            seg = _cv_piece(cfg, rng, cursor, piece)
        else:
            seg = _poly_piece(cfg, rng, piece, truncate=True)
            seg = seg.translated(cursor - seg.start)
        segments.append(seg)
        cursor = seg.end_position()
    return TrajectorySpec(DynamicsLevel.LEVEL3, segments)


SAMPLERS = {
    DynamicsLevel.LEVEL1: sample_level1,
    DynamicsLevel.LEVEL2: sample_level2,
    DynamicsLevel.LEVEL3: sample_level3,
}


def sample(level, cfg: SamplerConfig, duration=None, rng=None) -> TrajectorySpec:
    return SAMPLERS[DynamicsLevel(level)](cfg, duration, rng)


def _locate(spec: TrajectorySpec, t: float):
    bounds = spec.boundaries
    idx = int(np.searchsorted(bounds, t, side="right")) - 1
    idx = min(max(idx, 0), len(spec.segments) - 1)
    return idx, t - bounds[idx]


def position_at(spec: TrajectorySpec, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    t = min(float(t), spec.total_duration)
    idx, tau = _locate(spec, t)
    return spec.segments[idx].local_position(np.float64(tau)) + spec.origin_offset


def velocity_at(spec: TrajectorySpec, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if t > spec.total_duration:
        return np.zeros(2)
    idx, tau = _locate(spec, float(t))
    return spec.segments[idx].local_velocity(np.float64(tau))


def _segment_peak_speed(seg: Segment, whole_curve: bool = False) -> float:
    """Exact peak speed: |v|^2 is a polynomial in local time, so its maximum
    sits at an endpoint or at a real root of its derivative."""
    if seg.kind is SegmentKind.CONSTANT_VELOCITY:
        return float(np.linalg.norm(seg.velocity))
    end = (seg.t_traj if whole_curve else seg.duration) / seg.t_traj
    c = seg.coeffs
    k = np.arange(1, len(c))
    vx, vy = k * c[1:, 0], k * c[1:, 1]  # velocity coefficients in s, ascending powers
    sq = np.convolve(vx, vx) + np.convolve(vy, vy)
    dsq = np.arange(1, len(sq)) * sq[1:]
    crit = np.roots(dsq[::-1]) if np.any(dsq[1:]) else np.empty(0)
    crit = crit.real[(np.abs(crit.imag) <= 1e-9) & (crit.real > 0) & (crit.real < end)]
    s = np.concatenate([[0.0, end], crit])
    return float(np.sqrt(np.max(np.polyval(sq[::-1], s)))) / seg.t_traj


def max_speed(spec: TrajectorySpec) -> float:
    return max(_segment_peak_speed(s) for s in spec.segments)


def back_calculate_initial(spec: TrajectorySpec, t_exec: float, target_pose) -> TrajectorySpec:
    """Translate ``spec`` so the target sits at ``target_pose`` at ``t_exec``."""
    if not 0 <= t_exec <= spec.total_duration:
        raise ValueError(f"t_exec={t_exec} outside [0, {spec.total_duration}]")
    target_pose = np.asarray(target_pose, dtype=float)
    idx, tau = _locate(spec, float(t_exec))
    local = spec.segments[idx].local_position(np.float64(tau))
    return replace(spec, origin_offset=target_pose - local)
