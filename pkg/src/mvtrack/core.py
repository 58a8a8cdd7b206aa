"""Geometry and bookkeeping primitives shared by every other module.

Boxes are axis-aligned and stored with continuous (sub-pixel) coordinates;
rasterization only happens when frames are rendered.  Frame indices are
0-based everywhere, including on-disk formats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence


class Visibility(Enum):
    FULLY_VISIBLE = "fully_visible"
    PARTIALLY_OCCLUDED = "partially_occluded"
    FULLY_OCCLUDED = "fully_occluded"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y), extent (w, h), in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extent must be positive, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Point2:
    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("point coordinates must be finite")


@dataclass(frozen=True)
class Trajectory:
    """Per-view center sequence, one point per frame, contiguous in time."""

    start_time: int
    points: tuple[Point2, ...]

    def __post_init__(self):
        if len(self.points) < 1:
            raise ValueError("trajectory must hold at least one point")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.points) - 1

    def at(self, t: int) -> Point2:
        """Point at absolute frame index t."""
        if not self.start_time <= t <= self.end_time:
            raise IndexError(f"frame {t} outside [{self.start_time}, {self.end_time}]")
        return self.points[t - self.start_time]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union


def center(b: BoundingBox) -> Point2:
    return Point2(b.x + b.w / 2.0, b.y + b.h / 2.0)


@dataclass(frozen=True)
class MultiviewAnnotation:
    """Ground truth for a synchronized multi-camera sequence.

    boxes[c][t] / visibility[c][t] index view c, frame t.  All views carry
    the same number of frames (streams are synchronized).
    """

    boxes: tuple[tuple[BoundingBox, ...], ...]
    visibility: tuple[tuple[Visibility, ...], ...]

    def __post_init__(self):
        if len(self.boxes) != len(self.visibility):
            raise ValueError("boxes and visibility must cover the same views")
        lengths = {len(v) for v in self.boxes} | {len(v) for v in self.visibility}
        if len(lengths) > 1:
            raise ValueError("all views must have equal frame counts")

    @property
    def n_views(self) -> int:
        return len(self.boxes)

    @property
    def n_frames(self) -> int:
        return len(self.boxes[0]) if self.boxes else 0

    def to_json(self) -> str:
        doc = {
            "n_views": self.n_views,
            "n_frames": self.n_frames,
            "views": [
                [
                    {
                        "frame": t,
                        "x": b.x,
                        "y": b.y,
                        "w": b.w,
                        "h": b.h,
                        "visibility": vis.value,
                    }
                    for t, (b, vis) in enumerate(zip(view_boxes, view_vis))
                ]
                for view_boxes, view_vis in zip(self.boxes, self.visibility)
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MultiviewAnnotation":
        doc = json.loads(text)
        boxes = []
        visibility = []
        for view in doc["views"]:
            view_sorted = sorted(view, key=lambda rec: rec["frame"])
            boxes.append(
                tuple(BoundingBox(r["x"], r["y"], r["w"], r["h"]) for r in view_sorted)
            )
            visibility.append(tuple(Visibility(r["visibility"]) for r in view_sorted))
        ann = cls(boxes=tuple(boxes), visibility=tuple(visibility))
        if ann.n_views != doc["n_views"] or ann.n_frames != doc["n_frames"]:
            raise ValueError("annotation header disagrees with per-view arrays")
        return ann


def trajectory_from_boxes(boxes: Sequence[BoundingBox], start_time: int = 0) -> Trajectory:
    return Trajectory(start_time, tuple(center(b) for b in boxes))
