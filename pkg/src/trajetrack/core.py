"""Geometric and track-domain value types shared across the package.

Boxes follow the MOTChallenge convention (left, top, width, height) in
continuous pixel coordinates. Frames are 1-based.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class BoundingBox:
    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("left", "top", "width", "height"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.left, self.top, self.width, self.height)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"box must have positive size, got {self.width}x{self.height}")

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Centroid:
    x: float
    y: float

    def __iter__(self):
        yield self.x
        yield self.y

    def __add__(self, other: "Offset") -> "Centroid":
        return Centroid(self.x + other.dx, self.y + other.dy)

    def __sub__(self, other: "Centroid") -> "Offset":
        return Offset(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Offset:
    dx: float
    dy: float

    def __iter__(self):
        yield self.dx
        yield self.dy


@dataclass(frozen=True)
class Detection:
    frame: int
    box: BoundingBox
    confidence: float = 1.0

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"frames are 1-based, got {self.frame}")


class Provenance(enum.Enum):
    OBSERVED = "observed"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class TrackPoint:
    frame: int
    box: BoundingBox
    provenance: Provenance = Provenance.OBSERVED


class TrackState(enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class Track:
    id: int
    state: TrackState
    patience_left: int
    points: tuple[TrackPoint, ...] = ()
    lost_since: Optional[int] = None

    def __post_init__(self):
        if self.id < 1:
            raise ValueError("track ids are positive")
        frames = [p.frame for p in self.points]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"track {self.id}: frames must strictly increase")
        if self.state is TrackState.TERMINATED and self.patience_left != 0:
            raise ValueError("terminated track must have zero patience left")
        if (self.lost_since is not None) != (self.state is TrackState.LOST):
            raise ValueError("lost_since is set iff the track is lost")
        if self.state is TrackState.ACTIVE and self.points:
            if self.points[-1].provenance is not Provenance.OBSERVED:
                raise ValueError("an active track must end on an observed point")

    @property
    def last_box(self) -> BoundingBox:
        return self.points[-1].box


@dataclass(frozen=True)
class SequenceInfo:
    name: str
    frame_count: int
    image_width: int
    image_height: int
    frame_rate: float

    def __post_init__(self):
        for key in ("frame_count", "image_width", "image_height", "frame_rate"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")


def centroid_of(box: BoundingBox) -> Centroid:
    return Centroid(box.left + box.width / 2, box.top + box.height / 2)


def box_from_centroid(c: Centroid, width: float, height: float) -> BoundingBox:
    if width <= 0 or height <= 0:
        raise ValueError(f"box dimensions must be positive, got {width}x{height}")
    return BoundingBox(c.x - width / 2, c.y - height / 2, width, height)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)
