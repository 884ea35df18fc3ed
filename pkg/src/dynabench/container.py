"""Single-file episode container.

Layout (little-endian)::

    b"DMB1" | version u32 | header_len u64 | header (UTF-8 JSON)
    | per-step blocks | crc32 u32 of every preceding byte

Each step block holds, in order: one u8 frame per view, the u8 mask when the
step index is a multiple of ``mask_stride``, proprio f64, action f64 and
object pose f64.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .events import Outcome
from .expert import Episode
from .trajectories import TrajectorySpec
from .world import TaskSpec

MAGIC = b"DMB1"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")


class ContainerError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedVersion(ContainerError):
    pass


def _schema(ep: Episode) -> list:
    h, w = ep.task.resolution[1], ep.task.resolution[0]
    arms = ep.task.n_arms
    blocks = [{"name": f"frame:{v}", "dtype": "u8", "shape": [h, w]} for v in ep.task.views]
    if ep.masks is not None:
        blocks.append({"name": "mask", "dtype": "u8", "shape": [h, w], "every": ep.mask_stride})
    blocks += [
        {"name": "proprio", "dtype": "f64", "shape": [arms, 4]},
        {"name": "action", "dtype": "f64", "shape": [arms * 3]},
        {"name": "object_pose", "dtype": "f64", "shape": [2]},
    ]
    return blocks


def episode_to_bytes(ep: Episode) -> bytes:
    header = {
        "task": ep.task.to_dict(),
        "traj": ep.traj.to_dict(),
        "seed": int(ep.seed),
        "dt": ep.task.dt,
        "views": list(ep.task.views),
        "resolution": list(ep.task.resolution),
        "steps": ep.n_steps,
        "mask_stride": ep.mask_stride if ep.masks is not None else 0,
        "outcome": None if ep.outcome is None else ep.outcome.to_dict(),
        "meta": ep.meta,
        "schema": _schema(ep),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREAMBLE.pack(MAGIC, VERSION, len(head)), head]
    for k in range(ep.n_steps):
        for v in ep.task.views:
            parts.append(np.ascontiguousarray(ep.frames[v][k], dtype=np.uint8).tobytes())
        mask = ep.mask_at(k)
        if ep.masks is not None and mask is not None:
            parts.append(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(ep.proprio[k], dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(ep.actions[k], dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(ep.obj_poses[k], dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def episode_from_bytes(data: bytes) -> Episode:
    if len(data) < _PREAMBLE.size:
        raise ContainerError("truncated preamble", len(data))
    magic, version, head_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported container version {version}", 4)
    if len(data) < _PREAMBLE.size + _CRC.size:
        raise ContainerError("truncated file", len(data))
    body, (crc,) = data[: -_CRC.size], _CRC.unpack_from(data, len(data) - _CRC.size)
    head_end = _PREAMBLE.size + head_len
    if head_end > len(body):
        raise ContainerError("header runs past end of file", _PREAMBLE.size)
    if zlib.crc32(body) != crc:
        raise ContainerError("checksum mismatch", len(body))
    try:
        header = json.loads(body[_PREAMBLE.size : head_end].decode("utf-8"))
        task = TaskSpec.from_dict(header["task"])
        traj = TrajectorySpec.from_dict(header["traj"])
        steps = int(header["steps"])
        stride = int(header["mask_stride"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ContainerError(f"unreadable header: {exc}", _PREAMBLE.size) from exc

    h, w = task.resolution[1], task.resolution[0]
    arms = task.n_arms
    frame_n, pose_n = h * w, 2
    frames = {v: np.empty((steps, h, w), np.uint8) for v in task.views}
    n_masks = (steps + stride - 1) // stride if stride else 0
    masks = np.empty((n_masks, h, w), np.uint8) if stride else None
    proprio = np.empty((steps, arms, 4))
    actions = np.empty((steps, arms * 3))
    poses = np.empty((steps, 2))
    off = head_end

    def take(n: int, what: str, k: int) -> memoryview:
        nonlocal off
        if off + n > len(body):
            raise ContainerError(f"truncated {what} block of step {k}", off)
        chunk = body[off : off + n]
        off += n
        return chunk

    for k in range(steps):
        for v in task.views:
            frames[v][k] = np.frombuffer(take(frame_n, f"frame:{v}", k), np.uint8).reshape(h, w)
        if stride and k % stride == 0:
            masks[k // stride] = np.frombuffer(take(frame_n, "mask", k), np.uint8).reshape(h, w)
        proprio[k] = np.frombuffer(take(arms * 4 * 8, "proprio", k), "<f8").reshape(arms, 4)
        actions[k] = np.frombuffer(take(arms * 3 * 8, "action", k), "<f8")
        poses[k] = np.frombuffer(take(pose_n * 8, "object_pose", k), "<f8")
    if off != len(body):
        raise ContainerError(f"{len(body) - off} trailing bytes after {steps} declared steps", off)
    outcome = header.get("outcome")
    return Episode(
        task=task,
        traj=traj,
        seed=int(header["seed"]),
        outcome=None if outcome is None else Outcome.from_dict(outcome),
        frames=frames,
        proprio=proprio,
        actions=actions,
        obj_poses=poses,
        masks=masks,
        mask_stride=stride if stride else 1,
        meta=header.get("meta", {}),
    )


def write_episode(path, ep: Episode) -> None:
    from .flow import _atomic_write

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, episode_to_bytes(ep))


def read_episode(path) -> Episode:
    return episode_from_bytes(Path(path).read_bytes())


def episodes_equal(a: Episode, b: Episode) -> bool:
    return episode_to_bytes(a) == episode_to_bytes(b)
