"""Trajectory-pair datasets for training and benchmarking cross-view prediction.

Each scenario shares one 3D target path observed by two cameras with a
scenario-specific relative pose (relative angles sweep the full circle, so
the set covers same-facing through opposite-facing pairs).  Pairs are exact
projections; an optional noise flag adds zero-mean jitter to emulate tracked
trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from mvtrack.core import Point2, Trajectory


@dataclass(frozen=True)
class TrajectoryPair:
    view_a: Trajectory
    view_b: Trajectory
    scenario_id: int

    def __post_init__(self):
        if len(self.view_a) != len(self.view_b):
            raise ValueError("paired trajectories must have equal length")
        if len(self.view_a) < 90:
            raise ValueError("trajectory pairs must span at least 90 frames")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.array([[p.u, p.v] for p in self.view_a.points])
        b = np.array([[p.u, p.v] for p in self.view_b.points])
        return a, b


@dataclass(frozen=True)
class TrajectoryDatasetConfig:
    n_frames: int = 900
    image_size: tuple[int, int] = (640, 480)
    focal: float = 600.0
    camera_radius: float = 10.0
    workspace: tuple[float, float, float] = (3.5, 1.8, 1.8)
    n_waypoints: int = 12
    camera_jitter_deg: float = 2.0
    camera_jitter_frac: float = 0.02
    moving_cameras: bool = True
    noise_sigma: float = 0.0  # px of zero-mean jitter on the projected centers
    identical_cameras: bool = False


def _camera(position: np.ndarray, jitter_t: np.ndarray, jitter_r: np.ndarray, focal: float, cx: float, cy: float):
    from mvtrack.simulator.scene import _look_at

    n = len(jitter_t)
    rotations = np.empty((n, 3, 3))
    translations = np.empty((n, 3))
    for t in range(n):
        pos = position + jitter_t[t]
        r = _look_at(pos, np.zeros(3))
        ax, ay, az = jitter_r[t]
        rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
        ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
        rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
        rotations[t] = rx @ ry @ rz @ r
        translations[t] = -rotations[t] @ pos
    return rotations, translations


def _project_path(path: np.ndarray, rotations: np.ndarray, translations: np.ndarray, focal: float, cx: float, cy: float) -> np.ndarray:
    cam = np.einsum("tij,tj->ti", rotations, path) + translations
    z = cam[:, 2]
    if np.any(z <= 1e-9):
        raise ValueError("target moved behind a camera")
    return np.stack([cx + focal * cam[:, 0] / z, cy + focal * cam[:, 1] / z], axis=1)


def generate_scenario(
    scenario_id: int,
    relative_angle: float,
    rng: np.random.Generator,
    cfg: TrajectoryDatasetConfig,
) -> TrajectoryPair:
    """One trajectory pair; relative_angle fixes the camera-pair geometry."""
    from mvtrack.simulator.scene import _smooth_track

    wx, wy, wz = cfg.workspace
    pts = rng.uniform(-1.0, 1.0, size=(cfg.n_waypoints, 3)) * np.array([wx, wy, wz])
    spline = CubicSpline(np.linspace(0.0, 1.0, cfg.n_waypoints), pts, axis=0)
    path = spline(np.linspace(0.0, 1.0, cfg.n_frames))

    w, h = cfg.image_size
    angle_a = rng.uniform(0.0, 2.0 * np.pi)
    angle_b = angle_a + relative_angle
    jitter_amp_t = cfg.camera_jitter_frac * cfg.camera_radius if cfg.moving_cameras else 0.0
    jitter_amp_r = np.deg2rad(cfg.camera_jitter_deg) if cfg.moving_cameras else 0.0

    def place(angle: float):
        pos = np.array([-cfg.camera_radius * np.cos(angle), rng.uniform(-0.5, 0.5), -cfg.camera_radius * np.sin(angle)])
        jt = _smooth_track(rng, cfg.n_frames, 4, jitter_amp_t, 3)
        jr = _smooth_track(rng, cfg.n_frames, 4, jitter_amp_r, 3)
        return _camera(pos, jt, jr, cfg.focal, w / 2.0, h / 2.0)

    rot_a, tr_a = place(angle_a)
    if cfg.identical_cameras:
        rot_b, tr_b = rot_a, tr_a
    else:
        rot_b, tr_b = place(angle_b)

    px_a = _project_path(path, rot_a, tr_a, cfg.focal, w / 2.0, h / 2.0)
    px_b = _project_path(path, rot_b, tr_b, cfg.focal, w / 2.0, h / 2.0)
    if cfg.noise_sigma > 0:
        px_a = px_a + rng.normal(0.0, cfg.noise_sigma, px_a.shape)
        px_b = px_b + rng.normal(0.0, cfg.noise_sigma, px_b.shape)

    return TrajectoryPair(
        view_a=Trajectory(0, tuple(Point2(float(u), float(v)) for u, v in px_a)),
        view_b=Trajectory(0, tuple(Point2(float(u), float(v)) for u, v in px_b)),
        scenario_id=scenario_id,
    )


def generate_trajectory_dataset(
    n_scenarios: int,
    seed: int,
    cfg: TrajectoryDatasetConfig | None = None,
    angle_offset: float = 0.0,
    id_offset: int = 0,
) -> list[TrajectoryPair]:
    """Scenarios with distinct relative poses spread over the full circle."""
    if n_scenarios < 1:
        raise ValueError("need at least one scenario")
    cfg = cfg or TrajectoryDatasetConfig()
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_scenarios)
    pairs = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        rel = angle_offset + 2.0 * np.pi * i / n_scenarios + rng.uniform(-0.1, 0.1)
        pairs.append(generate_scenario(id_offset + i, rel, rng, cfg))
    return pairs


def make_default_trajectory_datasets(
    seed: int, cfg: TrajectoryDatasetConfig | None = None
) -> tuple[list[TrajectoryPair], list[TrajectoryPair]]:
    """Standard split: 25 training scenarios and 8 test scenarios.

    Test relative angles are offset from the training grid so the test
    geometries are held out (and never exactly identity).
    """
    train = generate_trajectory_dataset(25, seed, cfg, angle_offset=0.0)
    test = generate_trajectory_dataset(8, seed + 1, cfg, angle_offset=np.pi / 7.0, id_offset=25)
    return train, test


def save_trajectory_pairs(pairs: list[TrajectoryPair], path) -> None:
    """JSON lines, one pair per line."""
    with open(path, "w") as fh:
        for p in pairs:
            a, b = p.arrays()
            fh.write(
                json.dumps(
                    {
                        "scenario_id": p.scenario_id,
                        "start_time": p.view_a.start_time,
                        "view_a": a.tolist(),
                        "view_b": b.tolist(),
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_trajectory_pairs(path) -> list[TrajectoryPair]:
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            t0 = doc.get("start_time", 0)
            pairs.append(
                TrajectoryPair(
                    view_a=Trajectory(t0, tuple(Point2(u, v) for u, v in doc["view_a"])),
                    view_b=Trajectory(t0, tuple(Point2(u, v) for u, v in doc["view_b"])),
                    scenario_id=doc["scenario_id"],
                )
            )
    return pairs
