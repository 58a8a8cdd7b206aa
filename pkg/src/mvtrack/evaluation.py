"""Evaluation protocols: accuracy/robustness with re-initialization, success
rate without, and the cross-view trajectory prediction benchmark.

A tracker enters the protocols as a factory: factory(frames, boxes) returns
a stepper, and stepper(frames) returns the next per-view boxes.  Scripted
steppers are enough to unit-test the protocols themselves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from mvtrack.core import BoundingBox, MultiviewAnnotation, Visibility, iou
from mvtrack.tpn.model import TpnModel
from mvtrack.tpn.motion import integrate, motion_sequence, smooth_motion
from mvtrack.tpn.predict import predict_windows


@dataclass
class RunLog:
    """Per-frame record of one tracking run on one scene."""

    iou: np.ndarray        # (n_views, n_frames); NaN where not evaluated
    evaluated: np.ndarray  # (n_frames,) bool
    failures: int
    reinit_frames: list[int]
    visibility: tuple[tuple[Visibility, ...], ...]
    n_frames: int
    n_views: int
    scene: str = ""

    def valid_mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            positive = np.all(np.nan_to_num(self.iou, nan=0.0) > 0.0, axis=0)
        return positive & self.evaluated

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask().sum())

    @property
    def n_evaluated(self) -> int:
        return int(self.evaluated.sum())


class NoVisibleFrameError(RuntimeError):
    """Raised when a re-initialization point is required but none remains."""


def _all_visible_frames(ann: MultiviewAnnotation) -> np.ndarray:
    flags = np.ones(ann.n_frames, dtype=bool)
    for view in ann.visibility:
        flags &= np.array([v is Visibility.FULLY_VISIBLE for v in view])
    return flags


def run_with_reinit(tracker_factory, frames_of, ann: MultiviewAnnotation, scene: str = "") -> RunLog:
    """Tracking with the reset protocol.

    Whenever any view's IoU reaches zero, all views are reset to ground
    truth at the next frame where every view is fully visible; frames in
    between are not evaluated.  frames_of(t) must return the list of
    per-view images for frame t.
    """
    n_views, n_frames = ann.n_views, ann.n_frames
    all_visible = _all_visible_frames(ann)
    start_candidates = np.flatnonzero(all_visible)
    start = int(start_candidates[0]) if len(start_candidates) else 0

    ious = np.full((n_views, n_frames), np.nan)
    evaluated = np.zeros(n_frames, dtype=bool)
    failures = 0
    reinits: list[int] = []

    stepper = tracker_factory(frames_of(start), [ann.boxes[c][start] for c in range(n_views)])
    ious[:, start] = 1.0
    evaluated[start] = True

    t = start + 1
    while t < n_frames:
        boxes = stepper(frames_of(t))
        evaluated[t] = True
        for c in range(n_views):
            ious[c, t] = iou(boxes[c], ann.boxes[c][t])
        if np.any(ious[:, t] == 0.0):
            failures += 1
            later = np.flatnonzero(all_visible[t + 1 :])
            if len(later) == 0:
                break  # no fully-visible frame remains: run terminates here
            t_re = t + 1 + int(later[0])
            stepper = tracker_factory(frames_of(t_re), [ann.boxes[c][t_re] for c in range(n_views)])
            ious[:, t_re] = 1.0
            evaluated[t_re] = True
            reinits.append(t_re)
            t = t_re + 1
            continue
        t += 1
    return RunLog(ious, evaluated, failures, reinits, ann.visibility, n_frames, n_views, scene)


def run_without_reinit(tracker_factory, frames_of, ann: MultiviewAnnotation, scene: str = "") -> RunLog:
    """Single uninterrupted run from the first frame."""
    n_views, n_frames = ann.n_views, ann.n_frames
    ious = np.full((n_views, n_frames), np.nan)
    evaluated = np.zeros(n_frames, dtype=bool)
    stepper = tracker_factory(frames_of(0), [ann.boxes[c][0] for c in range(n_views)])
    ious[:, 0] = 1.0
    evaluated[0] = True
    for t in range(1, n_frames):
        boxes = stepper(frames_of(t))
        evaluated[t] = True
        for c in range(n_views):
            ious[c, t] = iou(boxes[c], ann.boxes[c][t])
    return RunLog(ious, evaluated, 0, [], ann.visibility, n_frames, n_views, scene)


def scene_accuracy(log: RunLog) -> tuple[float, int]:
    """Mean IoU over valid frames and views, plus the valid-frame count."""
    mask = log.valid_mask()
    n_valid = int(mask.sum())
    if n_valid == 0:
        return math.nan, 0
    return float(log.iou[:, mask].mean()), n_valid


def weighted_overall(values, weights) -> float:
    """Weighted average used for the overall score across scenes."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.shape != weights.shape or values.size == 0:
        raise ValueError("values and weights must be non-empty and aligned")
    return float(np.sum(values * weights) / np.sum(weights))


def robustness(log: RunLog, s_frames: int) -> float:
    """Survival probability exp(-S * F / N) over S frames.

    F counts re-initialization events and N the evaluated frames.  The raw
    triple is available via robustness_raw for alternative definitions.
    """
    if s_frames < 1:
        raise ValueError("S must be at least 1")
    f, n = log.failures, log.n_evaluated
    if n == 0:
        raise ValueError("log contains no evaluated frames")
    return float(np.exp(-s_frames * f / n))


def robustness_raw(log: RunLog, s_frames: int) -> dict:
    return {"failures": log.failures, "frames": log.n_evaluated, "S": s_frames}


def success_rate(log: RunLog) -> float:
    """Fraction of all frames where every view keeps positive IoU (no resets)."""
    if log.failures or log.reinit_frames:
        raise ValueError("success rate is defined for runs without re-initialization")
    return log.n_valid / log.n_frames


@dataclass
class MetricReport:
    per_scene: list[dict]
    overall: dict
    runs: int
    s_frames: int

    def to_json(self) -> str:
        return json.dumps(
            {"per_scene": self.per_scene, "overall": self.overall, "runs": self.runs, "S": self.s_frames},
            sort_keys=True,
        )

    def to_csv(self) -> str:
        cols = ["scene", "accuracy", "robustness", "success_rate", "weight", "failures", "frames"]
        lines = [",".join(cols)]
        for rec in self.per_scene:
            lines.append(",".join(str(rec.get(c, "")) for c in cols))
        lines.append(
            ",".join(
                [
                    "overall",
                    str(self.overall.get("accuracy", "")),
                    str(self.overall.get("robustness", "")),
                    str(self.overall.get("success_rate", "")),
                    str(self.overall.get("weight", "")),
                    "",
                    "",
                ]
            )
        )
        return "\n".join(lines) + "\n"


def aggregate(logs_by_scene: dict[str, list[RunLog]], s_frames: int = 50, with_reinit: bool = True) -> MetricReport:
    """Per-scene averages over repeated runs and the weighted overall row.

    Scenes whose valid set is empty in every run are reported but excluded
    from the overall averages.
    """
    per_scene = []
    accs, robs, succs, weights = [], [], [], []
    runs = 0
    for scene, logs in logs_by_scene.items():
        runs = max(runs, len(logs))
        scene_accs, scene_valid, scene_robs, scene_succ = [], [], [], []
        fails, frames = 0, 0
        for log in logs:
            rho, n_valid = scene_accuracy(log)
            if n_valid:
                scene_accs.append(rho)
            scene_valid.append(n_valid)
            fails += log.failures
            frames += log.n_evaluated
            if with_reinit:
                scene_robs.append(robustness(log, s_frames))
            else:
                scene_succ.append(success_rate(log))
        rec = {
            "scene": scene,
            "accuracy": float(np.mean(scene_accs)) if scene_accs else None,
            "robustness": float(np.mean(scene_robs)) if scene_robs else None,
            "success_rate": float(np.mean(scene_succ)) if scene_succ else None,
            "weight": float(np.mean(scene_valid)),
            "failures": fails,
            "frames": frames,
        }
        per_scene.append(rec)
        if rec["accuracy"] is not None and rec["weight"] > 0:
            accs.append(rec["accuracy"])
            weights.append(rec["weight"])
            if with_reinit:
                robs.append(rec["robustness"])
            else:
                succs.append(rec["success_rate"])
    overall = {
        "accuracy": weighted_overall(accs, weights) if accs else None,
        "robustness": weighted_overall(robs, weights) if robs else None,
        "success_rate": weighted_overall(succs, weights) if succs else None,
        "weight": float(np.sum(weights)) if weights else 0.0,
    }
    return MetricReport(per_scene=per_scene, overall=overall, runs=runs, s_frames=s_frames)


def naive_c(source_motions: np.ndarray, target_start: np.ndarray) -> np.ndarray:
    """Copy the source view's motions onto the target's last known point."""
    return integrate(source_motions, target_start)


def naive_s(target_history: np.ndarray, horizon: int) -> np.ndarray:
    """Constant-velocity extrapolation with the last smoothed motion."""
    hist = np.asarray(target_history, dtype=np.float64)
    if hist.shape[0] < 4:
        raise ValueError("need at least 4 points of history")
    r = smooth_motion(hist[-4:])
    steps = np.arange(1, horizon + 1, dtype=np.float64)
    return hist[-1] + steps[:, None] * r


def tpn_benchmark(
    test_pairs,
    model: TpnModel,
    n_sim: int = 1000,
    seed: int = 0,
    methods: tuple[str, ...] = ("TPN-S", "TPN-O", "Naive-C", "Naive-S"),
    window: int = 90,
    fit_points: int = 40,
    fit_iters: int = 300,
    online_iters: int = 150,
) -> dict[str, np.ndarray]:
    """Mean per-frame pixel error curves over seeded simulations.

    Each simulation samples a window of `window` frames from a random test
    pair, fits each method on the first `fit_points` frames, predicts the
    remaining frames from the source view, and records per-frame Euclidean
    error against ground truth.  Curves have length window - fit_points.
    """
    if not test_pairs:
        raise ValueError("no test pairs")
    root = np.random.SeedSequence(seed)
    pick_rng, online_rng = (np.random.default_rng(s) for s in root.spawn(2))

    horizon = window - fit_points
    ga = np.empty((window, n_sim, 2))
    gb = np.empty((window, n_sim, 2))
    arrays = [p.arrays() for p in test_pairs]
    for i in range(n_sim):
        j = int(pick_rng.integers(0, len(test_pairs)))
        a, b = arrays[j]
        s = int(pick_rng.integers(0, a.shape[0] - window + 1))
        ga[:, i, :] = a[s : s + window]
        gb[:, i, :] = b[s : s + window]
    gt = gb[fit_points:]  # (horizon, n_sim, 2)

    curves: dict[str, np.ndarray] = {}
    for name in methods:
        if name == "TPN-S":
            pred = predict_windows(model, ga, gb, fit_points=fit_points, fit_iters=fit_iters)
        elif name == "TPN-O":
            pred = predict_windows(
                model, ga, gb, fit_points=fit_points, online=True, rng=online_rng, online_iters=online_iters
            )
        elif name == "Naive-C":
            raw = np.diff(ga, axis=0)  # raw step into point t is raw[t-1]
            pred = np.cumsum(raw[fit_points - 1 :], axis=0) + gb[fit_points - 1]
        elif name == "Naive-S":
            m = motion_sequence(gb[:fit_points])
            steps = np.arange(1, horizon + 1, dtype=np.float64)[:, None, None]
            pred = gb[fit_points - 1] + steps * m[-1]
        else:
            raise ValueError(f"unknown method {name!r}")
        err = np.linalg.norm(pred - gt, axis=-1)  # (horizon, n_sim)
        curves[name] = err.mean(axis=1)
    return curves


def error_curves_csv(curves: dict[str, np.ndarray]) -> str:
    names = list(curves)
    lines = ["frame," + ",".join(names)]
    horizon = len(next(iter(curves.values())))
    for k in range(horizon):
        lines.append(str(k + 1) + "," + ",".join(f"{curves[n][k]:.6f}" for n in names))
    return "\n".join(lines) + "\n"


def save_error_plot(curves: dict[str, np.ndarray], path) -> None:
    """Error-versus-horizon curves as a static SVG."""
    import matplotlib

    matplotlib.use("svg", force=True)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, curve in curves.items():
        ax.plot(np.arange(1, len(curve) + 1), curve, label=name)
    ax.set_xlabel("predicted frames")
    ax.set_ylabel("mean pixel error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def save_ar_plot(points: dict[str, tuple[float, float]], path, ylabel: str = "robustness") -> None:
    """Accuracy-versus-robustness scatter as a static SVG."""
    import matplotlib

    matplotlib.use("svg", force=True)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for name, (acc, rob) in points.items():
        ax.plot([acc], [rob], marker="o", label=name)
    ax.set_xlabel("accuracy")
    ax.set_ylabel(ylabel)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
