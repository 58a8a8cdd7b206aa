"""Online cross-view prediction and confidence-weighted fusion."""

from __future__ import annotations

import numpy as np

from mvtrack.core import Point2, Trajectory
from mvtrack.tpn.model import HiddenParams, TpnModel, forward
from mvtrack.tpn.motion import motion_sequence
from mvtrack.tpn.train import fit_hidden, fit_online

FIT_POINTS = 40  # frames of shared history used to fit hidden parameters


class InsufficientHistoryError(RuntimeError):
    """Raised when fewer than the required fit frames are available."""


def predict_trajectory(
    model: TpnModel,
    source: Trajectory,
    target_history: Trajectory,
    lam1: float = 1e-3,
    fit_iters: int = 300,
    fitted: HiddenParams | None = None,
) -> Point2:
    """Predict the target-view center at the source trajectory's last frame.

    The hidden parameters are fitted on the last 40 frames of shared history
    ending at t1 = target_history.end_time (pass `fitted` to reuse a fit);
    source motions after t1 are then mapped through the network and
    integrated from the target's position at t1.
    """
    t1 = target_history.end_time
    t = source.end_time
    if t1 - target_history.start_time < FIT_POINTS - 1:
        raise InsufficientHistoryError(
            f"need {FIT_POINTS} shared frames, have {t1 - target_history.start_time + 1}"
        )
    if t <= t1:
        raise ValueError("source trajectory must extend past the target history")
    t0 = t1 - (FIT_POINTS - 1)
    if source.start_time > t0:
        raise InsufficientHistoryError("source history does not cover the fit window")

    src_pts = np.array([[p.u, p.v] for p in source.points])[t0 - source.start_time :]
    tgt_pts = np.array([[p.u, p.v] for p in target_history.points])[t0 - target_history.start_time :]

    src_m = motion_sequence(src_pts)          # motions for frames t0+3 .. t
    tgt_m = motion_sequence(tgt_pts)          # motions for frames t0+3 .. t1
    n_fit = tgt_m.shape[0]
    if fitted is None:
        fitted = fit_hidden(model, src_m[:n_fit], tgt_m, lam1=lam1, max_iters=fit_iters)

    out = forward(
        model.params,
        fitted.as_dict(batch=True),
        src_m[:, None, :] / model.motion_scale,
        model.config,
    )[:, 0, :] * model.motion_scale
    pred = out[n_fit:]                         # motions for frames t1+1 .. t
    anchor = target_history.points[-1]
    final = np.array([anchor.u, anchor.v]) + pred.sum(axis=0)
    return Point2(float(final[0]), float(final[1]))


def fit_for_history(
    model: TpnModel,
    source: Trajectory,
    target_history: Trajectory,
    lam1: float = 1e-3,
    fit_iters: int = 300,
) -> HiddenParams:
    """Fit hidden parameters for a (source, target) pair ending at t1.

    Split out so callers tracking through an occlusion can fit once per
    unreliable interval and reuse the result each frame.
    """
    t1 = target_history.end_time
    if t1 - target_history.start_time < FIT_POINTS - 1:
        raise InsufficientHistoryError("not enough shared history to fit")
    t0 = t1 - (FIT_POINTS - 1)
    if source.start_time > t0:
        raise InsufficientHistoryError("source history does not cover the fit window")
    src_pts = np.array([[p.u, p.v] for p in source.points])
    src_pts = src_pts[t0 - source.start_time : t1 - source.start_time + 1]
    tgt_pts = np.array([[p.u, p.v] for p in target_history.points])[t0 - target_history.start_time :]
    src_m = motion_sequence(src_pts)
    tgt_m = motion_sequence(tgt_pts)
    return fit_hidden(model, src_m, tgt_m, lam1=lam1, max_iters=fit_iters)


def predict_fused(
    q_b: float,
    g_b: Point2,
    reliable: list[tuple[float, Point2]],
) -> Point2:
    """Blend the view's own (low-confidence) estimate with cross-view ones.

    g' = sqrt(q_b) * g_b + (1 - sqrt(q_b)) / w * sum_c q_c * pred_c, with
    w = sum_c q_c.  The weights are non-negative and sum to one, so the
    result stays inside the convex hull of the inputs.
    """
    if not reliable:
        raise ValueError("no reliable views; use the momentum fallback instead")
    if not 0.0 <= q_b <= 1.0:
        raise ValueError("q_b must lie in [0, 1]")
    root = np.sqrt(q_b)
    w = sum(q for q, _ in reliable)
    if w <= 0:
        raise ValueError("reliable views must have positive confidence")
    acc_u = sum(q * p.u for q, p in reliable) / w
    acc_v = sum(q * p.v for q, p in reliable) / w
    return Point2(root * g_b.u + (1.0 - root) * acc_u, root * g_b.v + (1.0 - root) * acc_v)


def predict_windows(
    model: TpnModel,
    ga: np.ndarray,
    gb: np.ndarray,
    fit_points: int = FIT_POINTS,
    lam1: float = 1e-3,
    fit_iters: int = 300,
    online: bool = False,
    rng: np.random.Generator | None = None,
    online_iters: int = 150,
) -> np.ndarray:
    """Batched window protocol used by the prediction benchmark.

    ga, gb: (W, B, 2) position windows for source and target views.  Fits on
    the first `fit_points` frames, predicts the remaining frames of the
    window, and returns predicted target positions (W - fit_points, B, 2)
    anchored at gb[fit_points - 1].  With online=True all network weights
    are fitted per window instead of the hidden parameters.
    """
    from mvtrack.tpn.train import _fit_hidden_arrays
    from mvtrack.tpn.model import zero_hidden

    scale = model.motion_scale
    src = motion_sequence(ga) / scale            # (W-3, B, 2)
    tgt = motion_sequence(gb) / scale
    n_fit = fit_points - 3
    batch = src.shape[1]
    cfg = model.config

    if online:
        if rng is None:
            raise ValueError("online fitting draws fresh weights and needs an rng")
        params = fit_online(cfg, 1.0, src[:n_fit], tgt[:n_fit], rng, max_iters=online_iters)
        hidden = zero_hidden(cfg, batch)
    else:
        params = model.params
        hidden, _ = _fit_hidden_arrays(params, zero_hidden(cfg, batch), src[:n_fit], tgt[:n_fit], lam1, fit_iters, cfg)

    out = forward(params, hidden, src, cfg) * scale
    pred_m = out[n_fit:]                          # (W - fit_points, B, 2)
    anchor = gb[fit_points - 1]                   # (B, 2)
    return np.cumsum(pred_m, axis=0) + anchor
