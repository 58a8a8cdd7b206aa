"""Multiview tracking loop: per-view multi-scale search over a shared filter,
confidence gating, periodic collaborative updates, and trajectory correction
of unreliable views.

Per frame and view the tracker crops a region of interest around the last
box at each search scale, extracts windowed features, correlates them with
the single filter shared by all views, and reads the box from the best
response peak (sub-pixel, via a quadratic fit).  Views whose peak confidence
stays at or above tau contribute samples every update_period frames, when
the shared filter is re-solved from all views' weighted samples.  Views
below tau get their center replaced by the confidence-weighted fusion of
cross-view predictions, or by a momentum extrapolation when no reliable
view exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mvtrack.ccf import (
    FilterBank,
    Sample,
    SampleSet,
    correlate,
    extract_features,
    gaussian_label,
    hann_window,
    solve_ccf,
)
from mvtrack.core import BoundingBox, Point2, Trajectory, center
from mvtrack.tpn.model import HiddenParams, TpnModel
from mvtrack.tpn.motion import momentum_fallback, smooth_motion
from mvtrack.tpn.predict import (
    InsufficientHistoryError,
    fit_for_history,
    predict_fused,
    predict_trajectory,
)


@dataclass(frozen=True)
class TrackerConfig:
    tau: float = 0.5
    update_period: int = 7
    scales: tuple[float, ...] = (0.96, 0.98, 1.0, 1.02, 1.04)
    m_max: int = 30
    lam: float = 1e-2            # filter regularizer
    patch_size: int = 64         # RoI resampling size, px
    cell: int = 4                # feature cell, px
    roi_scale: float = 2.5       # RoI extent relative to the target box
    label_sigma_factor: float = 0.1
    weight_decay: float = 0.98   # sample-weight fade per update round
    scale_damping: float = 0.1   # fraction of the selected scale applied to the box
    tpn_lam1: float = 1e-3
    tpn_fit_iters: int = 300
    use_tpn: bool = True

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie strictly between 0 and 1")
        if self.update_period < 1:
            raise ValueError("update_period must be at least 1")
        if 1.0 not in self.scales:
            raise ValueError("the scale set must include 1.0")
        if self.patch_size % self.cell:
            raise ValueError("patch_size must be divisible by cell")

    @property
    def map_size(self) -> int:
        return self.patch_size // self.cell

    @property
    def label_sigma(self) -> float:
        # sqrt(H*W) scaled by the target-to-RoI ratio
        return self.label_sigma_factor * self.map_size / self.roi_scale


@dataclass
class ViewState:
    box: BoundingBox
    points: list[Point2]
    q: float = 1.0
    t_reliable: int = 0
    r_reliable: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass
class TrackState:
    cfg: TrackerConfig
    filter: FilterBank
    samples: SampleSet
    views: list[ViewState]
    label_spectrum: np.ndarray
    image_size: tuple[int, int]  # (width, height)
    t: int = 0
    n_filter_updates: int = 0
    tpn: TpnModel | None = None
    fit_cache: dict[tuple[int, int], tuple[int, HiddenParams]] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)
    insert_events: list[tuple[int, int, float]] = field(default_factory=list)


def crop_patch(image: np.ndarray, cx: float, cy: float, w: float, h: float, out: int) -> np.ndarray:
    """Bilinear resample of the (cx, cy)-centered window onto out x out px.

    Coordinates outside the image are clamped to the border (edge padding).
    """
    img = np.asarray(image, dtype=np.float64)
    ih, iw = img.shape
    ys = np.clip(cy - h / 2.0 + (np.arange(out) + 0.5) * h / out, 0.0, ih - 1.0)
    xs = np.clip(cx - w / 2.0 + (np.arange(out) + 0.5) * w / out, 0.0, iw - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return (
        img[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + img[np.ix_(y1, x0)] * fy * (1 - fx)
        + img[np.ix_(y0, x1)] * (1 - fy) * fx
        + img[np.ix_(y1, x1)] * fy * fx
    )


def confidence(response: np.ndarray) -> float:
    """Scalar confidence: the response peak clamped to [0, 1]."""
    r = np.asarray(response)
    if not np.all(np.isfinite(r)):
        raise ValueError("response contains non-finite values")
    return float(np.clip(r.max(), 0.0, 1.0))


def select_scale(peaks: list[float], scales: list[float]) -> int:
    """Index of the best-responding scale; ties prefer 1.0 then lower index."""
    if not peaks:
        raise ValueError("need at least one scale")
    best = max(peaks)
    candidates = [i for i, p in enumerate(peaks) if p == best]
    for i in candidates:
        if scales[i] == 1.0:
            return i
    return candidates[0]


def _quadratic_offset(left: float, mid: float, right: float) -> float:
    den = left - 2.0 * mid + right
    if abs(den) < 1e-12:
        return 0.0
    return float(np.clip(0.5 * (left - right) / den, -0.5, 0.5))


def _subpixel_peak(response: np.ndarray) -> tuple[float, float, float]:
    """Peak value and signed (dy, dx) displacement in response cells."""
    h, w = response.shape
    py, px = np.unravel_index(int(np.argmax(response)), response.shape)
    peak = float(response[py, px])
    off_y = _quadratic_offset(response[(py - 1) % h, px], peak, response[(py + 1) % h, px])
    off_x = _quadratic_offset(response[py, (px - 1) % w], peak, response[py, (px + 1) % w])
    dy = ((py + h // 2) % h) - h // 2 + off_y
    dx = ((px + w // 2) % w) - w // 2 + off_x
    return peak, dy, dx


def _sample_at(cfg: TrackerConfig, image: np.ndarray, box: BoundingBox) -> np.ndarray:
    c = center(box)
    patch = crop_patch(
        image, c.u, c.v, cfg.roi_scale * box.w, cfg.roi_scale * box.h, cfg.patch_size
    )
    return hann_window(extract_features(patch, cfg.cell))


def init(
    frames: list[np.ndarray],
    boxes: list[BoundingBox],
    cfg: TrackerConfig,
    tpn: TpnModel | None = None,
) -> TrackState:
    """Build the shared filter from one sample per view and seed trajectories."""
    if len(frames) != len(boxes):
        raise ValueError("one initial box per view is required")
    ih, iw = np.asarray(frames[0]).shape
    for b in boxes:
        c = center(b)
        if not (0 <= c.u < iw and 0 <= c.v < ih):
            raise ValueError(f"initial box center {c} outside the image")
    size = cfg.map_size
    label = gaussian_label(size, size, cfg.label_sigma)
    label_spectrum = np.fft.fft2(label)

    samples = SampleSet(cfg.m_max)
    for v, (frame, box) in enumerate(zip(frames, boxes)):
        samples.insert(Sample(_sample_at(cfg, frame, box), label_spectrum, 1.0, view=v, time=0))
    fbank = solve_ccf(samples, cfg.lam)

    views = [ViewState(box=b, points=[center(b)]) for b in boxes]
    return TrackState(
        cfg=cfg,
        filter=fbank,
        samples=samples,
        views=views,
        label_spectrum=label_spectrum,
        image_size=(iw, ih),
        tpn=tpn,
    )


def step(state: TrackState, frames: list[np.ndarray]) -> list[BoundingBox]:
    """Advance one frame; returns the per-view boxes for the new frame."""
    if len(frames) != len(state.views):
        raise ValueError("frame count must match the number of views")
    cfg = state.cfg
    state.t += 1
    t = state.t
    iw, ih = state.image_size
    size = cfg.map_size

    results = []  # per view: dict(center, q, scale, size)
    for v, (frame, view) in enumerate(zip(frames, state.views)):
        prev = view.box
        pc = center(prev)
        if not (0 <= pc.u < iw and 0 <= pc.v < ih):
            # RoI left the image: no usable evidence in this view
            results.append({"center": pc, "q": 0.0, "scale": 1.0, "size": (prev.w, prev.h)})
            continue
        img = np.asarray(frame, dtype=np.float64)
        peaks, disps, responses = [], [], []
        for k in cfg.scales:
            patch = crop_patch(img, pc.u, pc.v, cfg.roi_scale * prev.w * k, cfg.roi_scale * prev.h * k, cfg.patch_size)
            feats = hann_window(extract_features(patch, cfg.cell))
            response = correlate(state.filter, feats)
            peak, dy, dx = _subpixel_peak(response)
            peaks.append(peak)
            responses.append(response)
            # response cell -> image px at this scale
            disps.append((dy * cfg.roi_scale * prev.h * k / size, dx * cfg.roi_scale * prev.w * k / size))
        ki = select_scale(peaks, list(cfg.scales))
        k = cfg.scales[ki]
        q = confidence(responses[ki])
        dy, dx = disps[ki]
        new_center = Point2(pc.u + dx, pc.v + dy)
        factor = 1.0 + cfg.scale_damping * (k - 1.0)
        results.append({"center": new_center, "q": q, "scale": k, "size": (prev.w * factor, prev.h * factor)})

    update_round = t % cfg.update_period == 0
    if update_round:
        state.samples.decay(cfg.weight_decay)

    # harvest samples from confident views, then refresh the shared filter
    for v, (frame, res) in enumerate(zip(frames, results)):
        if res["q"] >= cfg.tau and update_round:
            w, h = res["size"]
            c = res["center"]
            box = BoundingBox(c.u - w / 2.0, c.v - h / 2.0, w, h)
            feats = _sample_at(cfg, np.asarray(frame, dtype=np.float64), box)
            state.samples.insert(Sample(feats, state.label_spectrum, res["q"], view=v, time=t))
            state.insert_events.append((t, v, res["q"]))
    if update_round:
        state.filter = solve_ccf(state.samples, cfg.lam)
        state.n_filter_updates += 1

    # correct unreliable views from the reliable ones
    reliable = [(v, res["q"]) for v, res in enumerate(results) if res["q"] >= cfg.tau]
    sources = {v: "cf" for v in range(len(results))}
    for v, res in enumerate(results):
        if res["q"] >= cfg.tau or not cfg.use_tpn:
            continue
        view = state.views[v]
        preds: list[tuple[float, Point2]] = []
        if state.tpn is not None and view.t_reliable + 1 >= 40:
            tgt_hist = Trajectory(0, tuple(view.points[: view.t_reliable + 1]))
            for c, qc in reliable:
                src_pts = state.views[c].points + [results[c]["center"]]
                src_traj = Trajectory(0, tuple(src_pts))
                try:
                    key = (v, c)
                    cached = state.fit_cache.get(key)
                    if cached is None or cached[0] != view.t_reliable:
                        fitted = fit_for_history(
                            state.tpn, src_traj, tgt_hist, lam1=cfg.tpn_lam1, fit_iters=cfg.tpn_fit_iters
                        )
                        state.fit_cache[key] = (view.t_reliable, fitted)
                    pred = predict_trajectory(
                        state.tpn, src_traj, tgt_hist, lam1=cfg.tpn_lam1, fitted=state.fit_cache[key][1]
                    )
                    preds.append((qc, pred))
                except InsufficientHistoryError:
                    continue
        if preds:
            res["center"] = predict_fused(res["q"], res["center"], preds)
            sources[v] = "tpn"
        else:
            res["center"] = momentum_fallback(view.points[-1], view.r_reliable)
            sources[v] = "momentum"
        res["size"] = (view.box.w, view.box.h)  # size frozen at the last reliable scale

    boxes = []
    for v, res in enumerate(results):
        view = state.views[v]
        w, h = res["size"]
        c = res["center"]
        box = BoundingBox(c.u - w / 2.0, c.v - h / 2.0, w, h)
        view.box = box
        view.points.append(c)
        view.q = res["q"]
        if res["q"] >= cfg.tau:
            view.t_reliable = t
            if len(view.points) >= 4:
                view.r_reliable = smooth_motion(np.array([[p.u, p.v] for p in view.points[-4:]]))
            else:
                view.r_reliable = np.zeros(2)
        state.log.append(
            {
                "t": t,
                "view": v,
                "box": [box.x, box.y, box.w, box.h],
                "q": res["q"],
                "scale": res["scale"],
                "source": sources[v],
            }
        )
        boxes.append(box)
    return boxes
