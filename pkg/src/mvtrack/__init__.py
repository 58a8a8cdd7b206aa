"""Multiview correlation-filter tracking with cross-view trajectory prediction."""

from mvtrack.core import BoundingBox, Point2, Trajectory, Visibility, center, iou

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Point2",
    "Trajectory",
    "Visibility",
    "center",
    "iou",
    "__version__",
]
