"""Shared domain types, unit conventions and geometric helpers.

Unit conventions used throughout the platform:

- distances in meters, speeds in m/s, accelerations in m/s^2
- timestamps are integer milliseconds on the scenario clock
- positions are planar Cartesian meters (local trace coordinates)
- headings in degrees, counterclockwise from the +x axis, in [0, 360)
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

# Exact conversion constants (international mile / foot definitions).
MPH_TO_MPS = 0.44704
FT_TO_M = 0.3048

_CONVERSIONS = {
    ("mph", "m/s"): MPH_TO_MPS,
    ("m/s", "mph"): 1.0 / MPH_TO_MPS,
    ("ft/s2", "m/s2"): FT_TO_M,
    ("m/s2", "ft/s2"): 1.0 / FT_TO_M,
    ("ft", "m"): FT_TO_M,
    ("m", "ft"): 1.0 / FT_TO_M,
}

_TOPIC_RE = re.compile(r"^[a-z0-9._*-]+$")


class ModelError(ValueError):
    """Invalid domain value."""


def convert_units(value: float, from_unit: str, to_unit: str) -> float:
    """Convert between the supported unit pairs (mph<->m/s, ft/s2<->m/s2, ft<->m)."""
    try:
        factor = _CONVERSIONS[(from_unit, to_unit)]
    except KeyError:
        raise ModelError(f"unsupported unit pair: {from_unit!r} -> {to_unit!r}") from None
    return value * factor


@dataclass(frozen=True)
class Position:
    x_m: float
    y_m: float


def distance(a: Position, b: Position) -> float:
    """Euclidean distance in meters between two planar positions."""
    return math.hypot(a.x_m - b.x_m, a.y_m - b.y_m)


def normalize_heading(deg: float) -> float:
    """Map any angle in degrees onto [0, 360)."""
    h = math.fmod(deg, 360.0)
    if h < 0.0:
        h += 360.0
    # fmod can return 360.0 - epsilon rounding back up for tiny negatives
    return 0.0 if h >= 360.0 else h


def heading_delta(from_deg: float, to_deg: float) -> float:
    """Signed shortest-arc rotation from one heading to another, in (-180, 180].

    An exact 180 degree separation resolves toward increasing angle (+180).
    """
    raw = normalize_heading(to_deg - from_deg)
    return raw if raw <= 180.0 else raw - 360.0


class EdgeKind(Enum):
    MOBILE = "mobile"
    FIXED = "fixed"
    SYSTEM = "system"


@dataclass(frozen=True)
class EdgeId:
    kind: EdgeKind
    id: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"


@dataclass(frozen=True)
class Bsm:
    """One basic safety message sample: where a vehicle is and what it is doing."""

    msg_id: str
    vehicle_id: str
    t_generated_ms: int
    pos: Position
    speed_mps: float
    heading_deg: float
    accel_mps2: float
    brake_active: bool

    def __post_init__(self) -> None:
        if self.speed_mps < 0:
            raise ModelError(f"bsm {self.msg_id}: negative speed {self.speed_mps}")
        if not (0.0 <= self.heading_deg < 360.0):
            raise ModelError(f"bsm {self.msg_id}: heading {self.heading_deg} outside [0, 360)")
        if self.t_generated_ms < 0:
            raise ModelError(f"bsm {self.msg_id}: negative timestamp")

    def to_dict(self) -> dict:
        return {
            "msg_id": self.msg_id,
            "vehicle_id": self.vehicle_id,
            "t_generated_ms": self.t_generated_ms,
            "x_m": self.pos.x_m,
            "y_m": self.pos.y_m,
            "speed_mps": self.speed_mps,
            "heading_deg": self.heading_deg,
            "accel_mps2": self.accel_mps2,
            "brake_active": self.brake_active,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Bsm":
        return cls(
            msg_id=d["msg_id"],
            vehicle_id=d["vehicle_id"],
            t_generated_ms=d["t_generated_ms"],
            pos=Position(d["x_m"], d["y_m"]),
            speed_mps=d["speed_mps"],
            heading_deg=d["heading_deg"],
            accel_mps2=d["accel_mps2"],
            brake_active=d["brake_active"],
        )


def validate_topic_name(name: str) -> str:
    """Validate a concrete topic name (no wildcards allowed)."""
    if not _TOPIC_RE.match(name):
        raise ModelError(f"invalid topic name {name!r}")
    if "*" in name:
        raise ModelError(f"concrete topic name {name!r} must not contain '*'")
    return name


def validate_pattern(pattern: str) -> str:
    """Validate a topic/flow pattern: a literal or a prefix with a single trailing '*'."""
    if not _TOPIC_RE.match(pattern):
        raise ModelError(f"invalid pattern {pattern!r}")
    star = pattern.find("*")
    if star != -1 and star != len(pattern) - 1:
        raise ModelError(f"pattern {pattern!r}: '*' only allowed in trailing position")
    return pattern


def pattern_matches(pattern: str, value: str) -> bool:
    """Match a literal-or-trailing-star pattern against a concrete value."""
    if pattern.endswith("*"):
        return value.startswith(pattern[:-1])
    return value == pattern


@dataclass(frozen=True)
class FlowLabel:
    """Taint label carried by every envelope: who produced it, who may consume it."""

    source: str
    sink: str = "*"


@dataclass(frozen=True)
class Envelope:
    """A broker message: payload plus ordering, timing and security metadata."""

    topic: str
    producer: str
    seq: int
    t_generated_ms: int
    t_published_ms: int
    payload: bytes
    label: FlowLabel = field(default=FlowLabel(source=""))
    signature: Optional[bytes] = None
    encrypted: bool = False

    def __post_init__(self) -> None:
        if self.t_published_ms >= 0 and self.t_published_ms < self.t_generated_ms:
            raise ModelError(
                f"envelope {self.topic}/{self.producer}/{self.seq}: "
                f"published {self.t_published_ms} before generated {self.t_generated_ms}"
            )

    def with_publication(self, t_published_ms: int, source: str) -> "Envelope":
        """Stamp publish time and the trusted-API source label."""
        return replace(self, t_published_ms=t_published_ms, label=replace(self.label, source=source))

    def key(self) -> tuple:
        """Identity of the message within a run."""
        return (self.topic, self.producer, self.seq)
