"""Synthetic multiview scenes: target motion, moving pinhole cameras, occluders.

World model
-----------
The target is a small textured billboard that follows a smooth (C2 cubic
spline) path through a working volume centered at the origin.  Cameras sit
on a circle around that volume, look roughly at its center and may jitter
slightly (hand-held style small rotation/translation).  Occluders are static
axis-aligned slabs.

Projection uses the pinhole model u = cx + f*X/Z, v = cy + f*Y/Z with camera
coordinates X_cam = R @ X_world + t.  A billboard of physical side `s` at
depth Z projects to a square box of side f*s/Z centered on the projected
center, so the box center matches the projected 3D center exactly.

Visibility per frame is the fraction of the target's projected box covered
by the silhouettes of occluders that are nearer to the camera:
below 20% fully visible, 20-80% partially occluded, above 80% fully
occluded.  Occluder silhouettes are the axis-aligned hulls of their eight
projected corners; the same convention is used when rendering, so labels and
pixels agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from mvtrack.core import BoundingBox, MultiviewAnnotation, Point2, Visibility

FULLY_VISIBLE_MAX = 0.2
FULLY_OCCLUDED_MIN = 0.8


class SceneGenerationError(RuntimeError):
    """Raised when a config cannot produce a scene meeting the invariants."""


class OutOfFrameError(RuntimeError):
    """Raised when the projected target center leaves the image."""


@dataclass(frozen=True)
class CameraPose:
    """Pinhole intrinsics plus a per-frame extrinsic track.

    rotations[t] is the 3x3 world-to-camera rotation at frame t and
    translations[t] the matching offset: X_cam = R @ X_world + t.
    """

    focal: float
    cx: float
    cy: float
    rotations: np.ndarray     # (n_frames, 3, 3)
    translations: np.ndarray  # (n_frames, 3)

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        r = np.asarray(self.rotations)
        eye = np.eye(3)
        err = np.max(np.abs(np.einsum("tij,tkj->tik", r, r) - eye))
        if err > 1e-9:
            raise ValueError(f"rotations not orthonormal (max deviation {err:.2e})")


@dataclass(frozen=True)
class Occluder:
    """Static axis-aligned slab with a seeded texture."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    texture_seed: int

    def corners(self) -> np.ndarray:
        c = np.asarray(self.center)
        half = np.asarray(self.size) / 2.0
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        return c + signs * half


@dataclass(frozen=True)
class SceneConfig:
    n_views: int = 3
    n_frames: int = 120
    image_size: tuple[int, int] = (640, 480)  # (width, height)
    focal: float = 600.0
    target_size: float = 0.9          # billboard side, world units
    n_waypoints: int = 6
    workspace: tuple[float, float, float] = (4.0, 2.0, 2.0)  # half-extents x, y, z
    camera_radius: float = 10.0
    camera_jitter_deg: float = 2.0    # max rotation jitter over a sequence
    camera_jitter_frac: float = 0.02  # max translation jitter, fraction of radius
    moving_cameras: bool = True
    n_occluders: int = 0
    # each event: (view, t_start, t_end) -> slab is placed to block that view
    # over the interval; pass explicit occluders instead for full control.
    occlusion_events: tuple[tuple[int, int, int], ...] = ()
    occluders: tuple[Occluder, ...] = ()
    target_mean: float = 200.0
    background_mean: float = 90.0
    occluder_mean: float = 40.0
    contrast_margin: float = 50.0
    static_target: bool = False
    depth_drift: float = 0.0  # world units the target drifts away per sequence


@dataclass(frozen=True)
class SceneSpec:
    """Fully expanded scene: concrete per-frame geometry, no lazy state."""

    config: SceneConfig
    rng_seed: int
    target_positions: np.ndarray  # (n_frames, 3)
    cameras: tuple[CameraPose, ...]
    occluders: tuple[Occluder, ...]
    target_texture_seed: int
    background_texture_seed: int

    @property
    def n_frames(self) -> int:
        return int(self.target_positions.shape[0])

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    def to_json(self) -> str:
        import json

        cfg = self.config
        doc = {
            "rng_seed": self.rng_seed,
            "config": {
                "n_views": cfg.n_views,
                "n_frames": cfg.n_frames,
                "image_size": list(cfg.image_size),
                "focal": cfg.focal,
                "target_size": cfg.target_size,
                "target_mean": cfg.target_mean,
                "background_mean": cfg.background_mean,
                "occluder_mean": cfg.occluder_mean,
            },
            "target_positions": self.target_positions.tolist(),
            "cameras": [
                {
                    "focal": cam.focal,
                    "cx": cam.cx,
                    "cy": cam.cy,
                    "rotations": np.asarray(cam.rotations).tolist(),
                    "translations": np.asarray(cam.translations).tolist(),
                }
                for cam in self.cameras
            ],
            "occluders": [
                {"center": list(o.center), "size": list(o.size), "texture_seed": o.texture_seed}
                for o in self.occluders
            ],
            "target_texture_seed": self.target_texture_seed,
            "background_texture_seed": self.background_texture_seed,
        }
        return json.dumps(doc, sort_keys=True)


def _look_at(position: np.ndarray, aim: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at `position` looking at `aim`.

    Camera axes: +Z forward (into the scene), +X right, +Y down, so
    projected u grows with world motion to the camera's right.
    """
    forward = aim - position
    forward = forward / np.linalg.norm(forward)
    world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(world_up, forward)
    nr = np.linalg.norm(right)
    if nr < 1e-12:  # looking straight up/down; pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def _smooth_track(rng: np.random.Generator, n_frames: int, n_knots: int, amplitude: float, dims: int) -> np.ndarray:
    """C2-smooth per-frame jitter curve through random knots in [-amp, amp]."""
    if amplitude == 0.0 or n_frames == 1:
        return np.zeros((n_frames, dims))
    knots = rng.uniform(-amplitude, amplitude, size=(max(n_knots, 2), dims))
    ts = np.linspace(0.0, 1.0, len(knots))
    spline = CubicSpline(ts, knots, axis=0)
    return spline(np.linspace(0.0, 1.0, n_frames))


def _spline_path(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    wx, wy, wz = cfg.workspace
    pts = rng.uniform(-1.0, 1.0, size=(cfg.n_waypoints, 3)) * np.array([wx, wy, wz])
    if cfg.static_target:
        pts = np.repeat(pts[:1], cfg.n_waypoints, axis=0)
    ts = np.linspace(0.0, 1.0, cfg.n_waypoints)
    spline = CubicSpline(ts, pts, axis=0)
    path = spline(np.linspace(0.0, 1.0, cfg.n_frames))
    if cfg.depth_drift != 0.0:
        # push the target along +x (away from camera 0 placed at -x side)
        path = path + np.outer(np.linspace(0.0, cfg.depth_drift, cfg.n_frames), np.array([1.0, 0.0, 0.0]))
    return path


def _build_cameras(rng: np.random.Generator, cfg: SceneConfig) -> tuple[CameraPose, ...]:
    w, h = cfg.image_size
    cameras = []
    base_angles = np.linspace(0.0, 2.0 * np.pi, cfg.n_views, endpoint=False)
    for c in range(cfg.n_views):
        angle = base_angles[c] + rng.uniform(-0.15, 0.15)
        pos0 = np.array(
            [
                -cfg.camera_radius * np.cos(angle),
                rng.uniform(-0.5, 0.5),
                -cfg.camera_radius * np.sin(angle),
            ]
        )
        jitter_t = _smooth_track(
            rng, cfg.n_frames, 4, cfg.camera_jitter_frac * cfg.camera_radius if cfg.moving_cameras else 0.0, 3
        )
        jitter_r = _smooth_track(
            rng, cfg.n_frames, 4, np.deg2rad(cfg.camera_jitter_deg) if cfg.moving_cameras else 0.0, 3
        )
        rotations = np.empty((cfg.n_frames, 3, 3))
        translations = np.empty((cfg.n_frames, 3))
        aim = np.zeros(3)
        for t in range(cfg.n_frames):
            pos = pos0 + jitter_t[t]
            r = _look_at(pos, aim)
            # small extra rotation about camera axes (hand-held wobble)
            ax, ay, az = jitter_r[t]
            rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
            ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
            rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
            r = rx @ ry @ rz @ r
            rotations[t] = r
            translations[t] = -r @ pos
        cameras.append(
            CameraPose(focal=cfg.focal, cx=w / 2.0, cy=h / 2.0, rotations=rotations, translations=translations)
        )
    return tuple(cameras)


def _place_event_occluder(
    scene_target: np.ndarray,
    camera: CameraPose,
    t_start: int,
    t_end: int,
    cfg: SceneConfig,
    seed: int,
) -> Occluder:
    """Axis-aligned slab blocking `camera`'s sight of the target over [t_start, t_end]."""
    t_mid = (t_start + t_end) // 2
    r = camera.rotations[t_mid]
    cam_pos = -r.T @ camera.translations[t_mid]
    frac = 0.55
    pts = []
    for t in range(t_start, t_end + 1):
        pts.append(cam_pos + frac * (scene_target[t] - cam_pos))
    pts = np.asarray(pts)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = cfg.target_size * frac * 1.6
    center = (lo + hi) / 2.0
    size = (hi - lo) + 2.0 * pad
    # keep the slab thin along its smallest extent so it reads as a panel
    thin_axis = int(np.argmin(size))
    size[thin_axis] = max(size[thin_axis] * 0.2, 0.05)
    return Occluder(center=tuple(center.tolist()), size=tuple(size.tolist()), texture_seed=seed)


def generate_scene(config: SceneConfig, seed: int) -> SceneSpec:
    """Deterministically expand a config into concrete per-frame geometry.

    Retries with derived sub-seeds until the in-frame invariant (target
    projects inside the image in at least 75% of frames per view) holds;
    raises SceneGenerationError when no attempt satisfies it.
    """
    if config.n_views < 2:
        raise SceneGenerationError("at least two cameras are required")
    root = np.random.SeedSequence(seed)
    attempts = root.spawn(8)
    last_frac = 0.0
    for attempt in attempts:
        rng = np.random.default_rng(attempt)
        target = _spline_path(rng, config)
        cameras = _build_cameras(rng, config)
        tex_seeds = rng.integers(0, 2**31 - 1, size=2 + max(config.n_occluders, len(config.occlusion_events)))
        occluders = list(config.occluders)
        for k, (view, t0, t1) in enumerate(config.occlusion_events):
            occluders.append(_place_event_occluder(target, cameras[view], t0, t1, config, int(tex_seeds[2 + k])))
        for k in range(config.n_occluders - len(config.occlusion_events) - len(config.occluders)):
            # untargeted occluders: slabs near the path midpoint at random offsets
            t_mid = int(rng.integers(config.n_frames // 4, max(config.n_frames * 3 // 4, config.n_frames // 4 + 1)))
            offset = rng.uniform(-1.0, 1.0, size=3) * np.asarray(config.workspace) * 0.5
            center = target[t_mid] * 0.5 + offset
            size = rng.uniform(0.5, 1.5, size=3) * config.target_size
            size[int(rng.integers(0, 3))] *= 0.15
            occluders.append(Occluder(tuple(center.tolist()), tuple(size.tolist()), int(rng.integers(0, 2**31 - 1))))

        spec = SceneSpec(
            config=config,
            rng_seed=seed,
            target_positions=target,
            cameras=cameras,
            occluders=tuple(occluders),
            target_texture_seed=int(tex_seeds[0]),
            background_texture_seed=int(tex_seeds[1]),
        )
        frac = _in_frame_fraction(spec)
        last_frac = frac
        if frac >= 0.75:
            return spec
    raise SceneGenerationError(
        f"cameras cannot keep the target in frame (best per-view fraction {last_frac:.2f} < 0.75)"
    )


def _project_point(camera: CameraPose, t: int, point: np.ndarray) -> tuple[float, float, float]:
    """Pixel coordinates and camera-space depth of a world point."""
    x_cam = camera.rotations[t] @ point + camera.translations[t]
    z = float(x_cam[2])
    if z <= 1e-9:
        raise OutOfFrameError(f"point behind camera at frame {t}")
    u = camera.cx + camera.focal * float(x_cam[0]) / z
    v = camera.cy + camera.focal * float(x_cam[1]) / z
    return u, v, z


def _in_frame_fraction(spec: SceneSpec) -> float:
    w, h = spec.config.image_size
    worst = 1.0
    for cam in spec.cameras:
        inside = 0
        for t in range(spec.n_frames):
            try:
                u, v, _ = _project_point(cam, t, spec.target_positions[t])
            except OutOfFrameError:
                continue
            if 0.0 <= u < w and 0.0 <= v < h:
                inside += 1
        worst = min(worst, inside / spec.n_frames)
    return worst


def _occluder_rect(camera: CameraPose, t: int, occ: Occluder) -> tuple[tuple[float, float, float, float], float] | None:
    """Projected silhouette (axis-aligned hull of corners) and mean depth.

    Returns None when the slab is entirely behind the camera.
    """
    us, vs, zs = [], [], []
    for corner in occ.corners():
        x_cam = camera.rotations[t] @ corner + camera.translations[t]
        z = float(x_cam[2])
        if z <= 1e-9:
            return None
        us.append(camera.cx + camera.focal * float(x_cam[0]) / z)
        vs.append(camera.cy + camera.focal * float(x_cam[1]) / z)
        zs.append(z)
    return (min(us), min(vs), max(us), max(vs)), float(np.mean(zs))


def covered_fraction(
    target_rect: tuple[float, float, float, float],
    cover_rects: list[tuple[float, float, float, float]],
) -> float:
    """Exact fraction of target_rect covered by the union of cover_rects."""
    tx0, ty0, tx1, ty1 = target_rect
    area = (tx1 - tx0) * (ty1 - ty0)
    if area <= 0:
        return 0.0
    clipped = []
    for x0, y0, x1, y1 in cover_rects:
        cx0, cy0 = max(x0, tx0), max(y0, ty0)
        cx1, cy1 = min(x1, tx1), min(y1, ty1)
        if cx1 > cx0 and cy1 > cy0:
            clipped.append((cx0, cy0, cx1, cy1))
    if not clipped:
        return 0.0
    xs = sorted({r[0] for r in clipped} | {r[2] for r in clipped})
    covered = 0.0
    for xa, xb in zip(xs[:-1], xs[1:]):
        strip = [r for r in clipped if r[0] <= xa and r[2] >= xb]
        if not strip:
            continue
        intervals = sorted((r[1], r[3]) for r in strip)
        total, cur_lo, cur_hi = 0.0, None, None
        for lo, hi in intervals:
            if cur_lo is None:
                cur_lo, cur_hi = lo, hi
            elif lo <= cur_hi:
                cur_hi = max(cur_hi, hi)
            else:
                total += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
        if cur_lo is not None:
            total += cur_hi - cur_lo
        covered += total * (xb - xa)
    return covered / area


def project(spec: SceneSpec, t: int, c: int) -> tuple[BoundingBox, Visibility]:
    """Ground-truth box and visibility of the target in view c at frame t."""
    if not 0 <= t < spec.n_frames:
        raise IndexError(f"frame {t} out of range")
    if not 0 <= c < spec.n_views:
        raise IndexError(f"view {c} out of range")
    cam = spec.cameras[c]
    w_img, h_img = spec.config.image_size
    u, v, z = _project_point(cam, t, spec.target_positions[t])
    if not (0.0 <= u < w_img and 0.0 <= v < h_img):
        raise OutOfFrameError(f"target center outside image in view {c} at frame {t}")
    side = cam.focal * spec.config.target_size / z
    box = BoundingBox(u - side / 2.0, v - side / 2.0, side, side)

    rects = []
    for occ in spec.occluders:
        proj = _occluder_rect(cam, t, occ)
        if proj is None:
            continue
        rect, depth = proj
        if depth < z:  # only occluders nearer to the camera hide the target
            rects.append(rect)
    frac = covered_fraction((box.x, box.y, box.x2, box.y2), rects)
    if frac < FULLY_VISIBLE_MAX:
        vis = Visibility.FULLY_VISIBLE
    elif frac > FULLY_OCCLUDED_MIN:
        vis = Visibility.FULLY_OCCLUDED
    else:
        vis = Visibility.PARTIALLY_OCCLUDED
    return box, vis


def occlusion_fraction(spec: SceneSpec, t: int, c: int) -> float:
    """Covered fraction of the target box (the quantity behind the labels)."""
    cam = spec.cameras[c]
    u, v, z = _project_point(cam, t, spec.target_positions[t])
    side = cam.focal * spec.config.target_size / z
    rect = (u - side / 2.0, v - side / 2.0, u + side / 2.0, v + side / 2.0)
    rects = []
    for occ in spec.occluders:
        proj = _occluder_rect(cam, t, occ)
        if proj is not None and proj[1] < z:
            rects.append(proj[0])
    return covered_fraction(rect, rects)


def annotate_scene(spec: SceneSpec) -> MultiviewAnnotation:
    """Per-frame ground truth for every view.

    Frames where the center leaves the image keep the projected box (clamped
    construction is avoided; the invariant guarantees >= 75% in-frame) and
    are labeled fully occluded since no tracker evidence exists there.
    """
    boxes: list[tuple[BoundingBox, ...]] = []
    vis: list[tuple[Visibility, ...]] = []
    w_img, h_img = spec.config.image_size
    for c in range(spec.n_views):
        vb: list[BoundingBox] = []
        vv: list[Visibility] = []
        cam = spec.cameras[c]
        for t in range(spec.n_frames):
            try:
                box, v = project(spec, t, c)
            except OutOfFrameError:
                u, vv_pt, z = _center_even_outside(cam, t, spec)
                side = cam.focal * spec.config.target_size / max(z, 1e-9)
                box = BoundingBox(u - side / 2.0, vv_pt - side / 2.0, side, side)
                v = Visibility.FULLY_OCCLUDED
            vb.append(box)
            vv.append(v)
        boxes.append(tuple(vb))
        vis.append(tuple(vv))
    return MultiviewAnnotation(boxes=tuple(boxes), visibility=tuple(vis))


def _center_even_outside(cam: CameraPose, t: int, spec: SceneSpec) -> tuple[float, float, float]:
    x_cam = cam.rotations[t] @ spec.target_positions[t] + cam.translations[t]
    z = float(x_cam[2])
    if z <= 1e-9:
        z = 1e-9
    u = cam.cx + cam.focal * float(x_cam[0]) / z
    v = cam.cy + cam.focal * float(x_cam[1]) / z
    return u, v, z


def project_center(spec: SceneSpec, t: int, c: int) -> Point2:
    """Projected target center (no occlusion handling, no frame check)."""
    cam = spec.cameras[c]
    u, v, _ = _project_point(cam, t, spec.target_positions[t])
    return Point2(u, v)
