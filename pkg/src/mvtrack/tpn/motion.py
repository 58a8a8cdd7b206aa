"""Motion-vector arithmetic: smoothing, integration and the momentum fallback.

A smoothed motion vector is the product of the mean step magnitude and the
mean unit step direction over the last three between-frame steps (four
trajectory points).  A zero-length step contributes a zero direction vector.
"""

from __future__ import annotations

import numpy as np

from mvtrack.core import Point2, Trajectory


def smooth_motion(points: np.ndarray) -> np.ndarray:
    """Smoothed motion from exactly four consecutive center points.

    points: array-like (4, 2).  Returns r = mean(|step|) * mean(step/|step|).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (4, 2):
        raise ValueError(f"expected 4 points, got shape {pts.shape}")
    steps = np.diff(pts, axis=0)
    mags = np.linalg.norm(steps, axis=1)
    speed = mags.mean()
    dirs = np.zeros_like(steps)
    nz = mags > 0
    dirs[nz] = steps[nz] / mags[nz, None]
    return speed * dirs.mean(axis=0)


def motion_sequence(points: np.ndarray) -> np.ndarray:
    """Smoothed motions for every frame with a full 4-point history.

    points: (N, 2) or (N, B, 2).  Returns (N-3, ...) where entry t
    corresponds to the step into points[t+3].
    """
    pts = np.asarray(points, dtype=np.float64)
    steps = np.diff(pts, axis=0)                      # (N-1, ..., 2)
    mags = np.linalg.norm(steps, axis=-1)             # (N-1, ...)
    dirs = np.zeros_like(steps)
    nz = mags > 0
    dirs[nz] = steps[nz] / mags[nz][..., None]
    # windows of 3 consecutive steps ending at index t+2
    speed = (mags[:-2] + mags[1:-1] + mags[2:]) / 3.0
    direction = (dirs[:-2] + dirs[1:-1] + dirs[2:]) / 3.0
    return speed[..., None] * direction


def integrate(motions: np.ndarray, origin) -> np.ndarray:
    """Cumulative positions; the first output element is the origin itself.

    motions: (T, ..., 2); origin: (.., 2) broadcastable.  Returns (T+1, ..., 2).
    """
    m = np.asarray(motions, dtype=np.float64)
    g0 = np.asarray(origin, dtype=np.float64)
    csum = np.cumsum(m, axis=0) + g0
    out = np.empty((m.shape[0] + 1,) + csum.shape[1:])
    out[0] = g0
    out[1:] = csum
    return out


def integrate_trajectory(motions: np.ndarray, origin: Point2, start_time: int = 0) -> Trajectory:
    pos = integrate(motions, np.array([origin.u, origin.v]))
    return Trajectory(start_time, tuple(Point2(float(u), float(v)) for u, v in pos))


def momentum_fallback(g_prev: Point2, r_last_reliable: np.ndarray) -> Point2:
    """Extrapolate one frame with the motion from the last reliable time."""
    r = np.asarray(r_last_reliable, dtype=np.float64)
    return Point2(g_prev.u + float(r[0]), g_prev.v + float(r[1]))
