"""Deterministic grayscale rendering of scene frames and sequence export.

Every frame is a pure function of (scene, t, c): a seeded value-noise
background, the target billboard warped into its projected box, and occluder
slabs drawn as textured rectangles, all composited far-to-near by camera
depth.  Frames are written as binary 8-bit PGM files.
"""

from __future__ import annotations

import functools
import json
import os

import numpy as np

from mvtrack.simulator.scene import (
    OutOfFrameError,
    SceneSpec,
    _occluder_rect,
    _project_point,
    annotate_scene,
)

_TEXTURE_SIDE = 64


def _value_noise(seed: int, height: int, width: int, coarse: int, mean: float, std: float) -> np.ndarray:
    """Smooth noise: seeded coarse grid, bilinearly upsampled, rescaled."""
    rng = np.random.default_rng(seed)
    ch = max(2, coarse)
    cw = max(2, int(round(coarse * width / max(height, 1))))
    grid = rng.standard_normal((ch, cw))
    ys = np.linspace(0, ch - 1, height)
    xs = np.linspace(0, cw - 1, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    img = (
        grid[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + grid[np.ix_(y1, x0)] * fy * (1 - fx)
        + grid[np.ix_(y0, x1)] * (1 - fy) * fx
        + grid[np.ix_(y1, x1)] * fy * fx
    )
    s = img.std()
    if s > 1e-12:
        img = (img - img.mean()) / s
    return img * std + mean


@functools.lru_cache(maxsize=64)
def _background(seed: int, width: int, height: int, mean: float) -> np.ndarray:
    return _value_noise(seed, height, width, coarse=24, mean=mean, std=12.0)


@functools.lru_cache(maxsize=64)
def _patch_texture(seed: int, mean: float) -> np.ndarray:
    return _value_noise(seed, _TEXTURE_SIDE, _TEXTURE_SIDE, coarse=8, mean=mean, std=30.0)


def _draw_rect(canvas: np.ndarray, rect: tuple[float, float, float, float], texture: np.ndarray) -> None:
    """Fill the image-space rect with the texture stretched to fit (in place)."""
    h_img, w_img = canvas.shape
    x0 = int(np.floor(rect[0]))
    y0 = int(np.floor(rect[1]))
    x1 = int(np.ceil(rect[2]))
    y1 = int(np.ceil(rect[3]))
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x1, w_img), min(y1, h_img)
    if cx1 <= cx0 or cy1 <= cy0:
        return
    th, tw = texture.shape
    rw = max(x1 - x0, 1)
    rh = max(y1 - y0, 1)
    # nearest-neighbour stretch of the canonical patch to the rect footprint
    yy = ((np.arange(cy0, cy1) - y0) * th // rh).clip(0, th - 1)
    xx = ((np.arange(cx0, cx1) - x0) * tw // rw).clip(0, tw - 1)
    canvas[cy0:cy1, cx0:cx1] = texture[np.ix_(yy, xx)]


def render_frame(spec: SceneSpec, t: int, c: int) -> np.ndarray:
    """8-bit grayscale frame for view c at time t."""
    if not 0 <= t < spec.n_frames:
        raise IndexError(f"frame {t} out of range")
    if not 0 <= c < spec.n_views:
        raise IndexError(f"view {c} out of range")
    cfg = spec.config
    w_img, h_img = cfg.image_size
    cam = spec.cameras[c]
    canvas = _background(spec.background_texture_seed + c, w_img, h_img, cfg.background_mean).copy()

    # collect drawable entities with their camera-space depth
    entities: list[tuple[float, tuple[float, float, float, float], np.ndarray]] = []
    try:
        u, v, z = _project_point(cam, t, spec.target_positions[t])
        side = cam.focal * cfg.target_size / z
        rect = (u - side / 2.0, v - side / 2.0, u + side / 2.0, v + side / 2.0)
        entities.append((z, rect, _patch_texture(spec.target_texture_seed, cfg.target_mean)))
    except OutOfFrameError:
        pass  # target behind the camera: nothing to draw
    for occ in spec.occluders:
        proj = _occluder_rect(cam, t, occ)
        if proj is None:
            continue
        rect, depth = proj
        entities.append((depth, rect, _patch_texture(occ.texture_seed, cfg.occluder_mean)))

    for depth, rect, texture in sorted(entities, key=lambda e: -e[0]):
        _draw_rect(canvas, rect, texture)
    return np.clip(np.round(canvas), 0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a 2D uint8 image")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError("only binary (P5) PGM is supported")
    # header: magic, width, height, maxval, then a single whitespace byte
    fields: list[bytes] = []
    i = 2
    while len(fields) < 3:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j : j + 1].isspace():
            j += 1
        fields.append(blob[i:j])
        i = j
    i += 1
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(blob[i : i + w * h], dtype=np.uint8).reshape(h, w)


def export_sequence(spec: SceneSpec, out_dir) -> dict:
    """Write frames, annotations.json and scene.json under out_dir.

    Layout: view{c}/frame{t:06d}.pgm per frame.  Returns a small summary
    (views, frames, per-view occlusion fractions).
    """
    os.makedirs(out_dir, exist_ok=True)
    ann = annotate_scene(spec)
    for c in range(spec.n_views):
        view_dir = os.path.join(out_dir, f"view{c}")
        os.makedirs(view_dir, exist_ok=True)
        for t in range(spec.n_frames):
            write_pgm(os.path.join(view_dir, f"frame{t:06d}.pgm"), render_frame(spec, t, c))
    with open(os.path.join(out_dir, "annotations.json"), "w") as fh:
        fh.write(ann.to_json())
    with open(os.path.join(out_dir, "scene.json"), "w") as fh:
        fh.write(spec.to_json())
    from mvtrack.core import Visibility

    occluded = {
        c: sum(1 for v in ann.visibility[c] if v is not Visibility.FULLY_VISIBLE) / spec.n_frames
        for c in range(spec.n_views)
    }
    return {"n_views": spec.n_views, "n_frames": spec.n_frames, "occluded_fraction": occluded}


def load_sequence(seq_dir) -> tuple[int, int]:
    """Views and frame count found in an exported sequence directory."""
    with open(os.path.join(seq_dir, "annotations.json")) as fh:
        doc = json.load(fh)
    return doc["n_views"], doc["n_frames"]
