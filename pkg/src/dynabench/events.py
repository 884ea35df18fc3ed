"""Event and outcome records shared by the simulator and the metrics."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class EventTag(str, enum.Enum):
    CONTACT = "contact"
    OUT_OF_VIEW = "out_of_view"
    CLUTTER_COLLISION = "clutter_collision"
    SUCCESS = "success"
    TIMEOUT = "timeout"


TERMINAL_TAGS = frozenset({EventTag.SUCCESS, EventTag.TIMEOUT})


@dataclass(frozen=True)
class Event:
    tag: EventTag
    at: float


@dataclass(frozen=True, eq=False)
class Outcome:
    """End-of-episode summary; positions are (arms, 2) / (2,) arrays."""

    success: bool
    t_end: float
    events: tuple
    ee_initial: np.ndarray
    ee_final: np.ndarray
    obj_final: np.ndarray

    def has(self, tag: EventTag) -> bool:
        return any(e.tag is tag for e in self.events)

    def to_dict(self) -> dict:
        return {
            "success": bool(self.success),
            "t_end": float(self.t_end),
            "events": [[e.tag.value, float(e.at)] for e in self.events],
            "ee_initial": np.asarray(self.ee_initial).tolist(),
            "ee_final": np.asarray(self.ee_final).tolist(),
            "obj_final": np.asarray(self.obj_final).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        return cls(
            bool(d["success"]),
            float(d["t_end"]),
            tuple(Event(EventTag(tag), float(at)) for tag, at in d["events"]),
            np.asarray(d["ee_initial"], dtype=float),
            np.asarray(d["ee_final"], dtype=float),
            np.asarray(d["obj_final"], dtype=float),
        )

    def __eq__(self, other):
        if not isinstance(other, Outcome):
            return NotImplemented
        return self.to_dict() == other.to_dict()
