"""Two-stage training of the motion mapping network, plus online fitting.

Stage 1 (per pair): freeze the shared weights, fit the per-pair hidden
parameters on the first part of a window by minimizing

    L1(h) = sum_t ||net(r_a)_t - r_b_t||^2 + lam1 ||h||^2 .

Stage 2 (per batch): jointly refine shared weights and all hidden
parameters over full windows, adding a position term that integrates the
predicted motions from the window's first target position:

    L2 = sum_i [ motion term + lam2 * sum_t ||int(pred)_t - g_b_t||^2
                 + lam1 ||h_i||^2 ] .

All motion and position inputs are divided by the model's motion scale
(the 95th-percentile smoothed speed of the training set), so typical step
magnitudes are O(1) regardless of pixel speed.

Both stages use iRprop-.  Losses and gradients are exact analytic
quantities; gradient checks against central finite differences are part of
the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from mvtrack.simulator.trajectories import TrajectoryPair
from mvtrack.tpn.model import (
    PARAM_ORDER,
    HiddenParams,
    TpnConfig,
    TpnModel,
    backward,
    forward,
    init_model,
    param_shapes,
    random_hidden,
    zero_hidden,
)
from mvtrack.tpn.motion import motion_sequence
from mvtrack.tpn.rprop import Rprop


class TpnDivergedError(RuntimeError):
    """Raised when an optimization loss becomes non-finite."""


@dataclass(frozen=True)
class TpnTrainConfig:
    n_b: int = 100           # trajectory pairs sampled per batch
    window: int = 90         # frames per sampled window
    fit_window: int = 40     # frames used to fit hidden parameters
    lambda1: float = 1e-3    # hidden-parameter regularizer
    lambda2: float = 1.0     # integrated-position term weight
    epochs: int = 20
    stage1_iters: int = 300
    stage2_iters: int = 60
    scale_percentile: float = 95.0
    model: TpnConfig = field(default_factory=TpnConfig)

    def __post_init__(self):
        if self.fit_window >= self.window:
            raise ValueError("fit_window must be smaller than window")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be non-negative")


def motion_scale_of(pairs: list[TrajectoryPair], percentile: float = 95.0) -> float:
    """Normalization scale: high-percentile smoothed speed over a dataset."""
    mags = []
    for p in pairs:
        a, b = p.arrays()
        for arr in (a, b):
            m = motion_sequence(arr)
            mags.append(np.linalg.norm(m, axis=-1))
    all_mags = np.concatenate(mags)
    return max(float(np.percentile(all_mags, percentile)), 1e-6)


def stage1_loss_grads(
    params: dict[str, np.ndarray],
    hidden: dict[str, np.ndarray],
    src: np.ndarray,
    tgt: np.ndarray,
    lam1: float,
    cfg: TpnConfig,
    want_theta: bool = False,
):
    """Motion-matching loss with hidden-parameter (and optional weight) grads.

    src, tgt: (T, B, 2) normalized motion sequences.  The loss is summed over
    batch pairs; hidden gradients stay per pair.
    """
    out, cache = forward(params, hidden, src, cfg, want_cache=True)
    resid = out - tgt
    loss_pairs = np.sum(resid**2, axis=(0, 2))  # (B,)
    reg = sum(np.sum(v**2, axis=1) for v in hidden.values())
    loss = float(np.sum(loss_pairs + lam1 * reg))
    if not np.isfinite(loss):
        raise TpnDivergedError("stage-1 loss is not finite")
    theta_g, hidden_g = backward(params, cache, 2.0 * resid, cfg, want_theta, want_hidden=True)
    for k, v in hidden.items():
        hidden_g[k] = hidden_g[k] + 2.0 * lam1 * v
    return loss, theta_g, hidden_g


def stage2_loss_grads(
    params: dict[str, np.ndarray],
    hidden: dict[str, np.ndarray],
    src: np.ndarray,
    tgt: np.ndarray,
    g0: np.ndarray,
    gt_pos: np.ndarray,
    lam1: float,
    lam2: float,
    cfg: TpnConfig,
    want_theta: bool = True,
    want_hidden: bool = True,
):
    """Stage-2 loss: motion term + integrated-position term + regularizer.

    g0: (B, 2) anchor positions; gt_pos: (T, B, 2) ground-truth positions
    aligned with the motion steps (position after applying motion t).
    """
    out, cache = forward(params, hidden, src, cfg, want_cache=True)
    resid = out - tgt
    pred_pos = np.cumsum(out, axis=0) + g0
    pos_resid = pred_pos - gt_pos
    reg = sum(np.sum(v**2, axis=1) for v in hidden.values())
    loss = float(np.sum(resid**2) + lam2 * np.sum(pos_resid**2) + lam1 * np.sum(reg))
    if not np.isfinite(loss):
        raise TpnDivergedError("stage-2 loss is not finite")
    # d(position term)/d(out_s) = 2*lam2 * sum_{t >= s} pos_resid_t
    rev_csum = np.cumsum(pos_resid[::-1], axis=0)[::-1]
    dout = 2.0 * resid + 2.0 * lam2 * rev_csum
    theta_g, hidden_g = backward(params, cache, dout, cfg, want_theta, want_hidden)
    if want_hidden:
        for k, v in hidden.items():
            hidden_g[k] = hidden_g[k] + 2.0 * lam1 * v
    return loss, theta_g, hidden_g


def fit_hidden(
    model: TpnModel,
    source_motions: np.ndarray,
    target_motions: np.ndarray,
    lam1: float = 1e-3,
    max_iters: int = 300,
    rng: np.random.Generator | None = None,
) -> HiddenParams:
    """Fit per-pair hidden parameters with the shared weights frozen.

    Motions are raw (unnormalized) sequences of shape (T, 2) or (T, B, 2).
    Starts from zeros (or a seeded random draw when rng is given), runs
    iRprop- to the step-size floor or max_iters, and returns the best
    parameters seen, so the final loss never exceeds the initial one.
    """
    src = np.asarray(source_motions, dtype=np.float64) / model.motion_scale
    tgt = np.asarray(target_motions, dtype=np.float64) / model.motion_scale
    single = src.ndim == 2
    if single:
        src = src[:, None, :]
        tgt = tgt[:, None, :]
    if src.shape != tgt.shape:
        raise ValueError("source and target motion sequences must align")
    batch = src.shape[1]
    cfg = model.config
    hidden = random_hidden(cfg, batch, rng) if rng is not None else zero_hidden(cfg, batch)
    hidden, _ = _fit_hidden_arrays(model.params, hidden, src, tgt, lam1, max_iters, cfg)
    if single:
        return HiddenParams.from_dict(hidden)
    return HiddenParams(h_r1=hidden["h_r1"], h_r2=hidden["h_r2"], h_p=hidden["h_p"])


def _fit_hidden_arrays(params, hidden, src, tgt, lam1, max_iters, cfg):
    """Shared stage-1 loop on already-normalized (T, B, 2) arrays."""
    opt = Rprop(hidden)
    best = {k: v.copy() for k, v in hidden.items()}
    best_loss = np.inf
    loss = np.inf
    for _ in range(max_iters):
        loss, _, grads = stage1_loss_grads(params, hidden, src, tgt, lam1, cfg)
        if loss < best_loss:
            best_loss = loss
            best = {k: v.copy() for k, v in hidden.items()}
        opt.update(hidden, grads)
        if opt.at_floor():
            break
    final_loss, _, _ = stage1_loss_grads(params, best, src, tgt, lam1, cfg)
    return best, final_loss


def fit_online(
    cfg: TpnConfig,
    motion_scale: float,
    source_motions: np.ndarray,
    target_motions: np.ndarray,
    rng: np.random.Generator,
    max_iters: int = 150,
) -> dict[str, np.ndarray]:
    """Fit all network weights per pair from scratch (no hidden parameters).

    This is the all-online variant used as a benchmark baseline: weights get
    a leading batch axis, one independent draw per pair, and are trained on
    the fit window alone.  Returns the batched weight dict.
    """
    src = np.asarray(source_motions, dtype=np.float64) / motion_scale
    tgt = np.asarray(target_motions, dtype=np.float64) / motion_scale
    batch = src.shape[1]
    shapes = param_shapes(cfg)
    params = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        if len(shape) == 1:
            params[name] = np.zeros((batch,) + shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=(batch,) + shape)
    hidden = zero_hidden(cfg, batch)  # fixed at zero: no per-pair code path

    opt = Rprop(params)
    best = {k: v.copy() for k, v in params.items()}
    best_loss = np.inf
    for _ in range(max_iters):
        loss, theta_g, _ = stage1_loss_grads(params, hidden, src, tgt, lam1=0.0, cfg=cfg, want_theta=True)
        if loss < best_loss:
            best_loss = loss
            best = {k: v.copy() for k, v in params.items()}
        opt.update(params, theta_g)
        if opt.at_floor():
            break
    return best


def _window_arrays(pairs, idx, starts, window):
    """Stack sampled windows: positions (window, B, 2) for both views."""
    ga = np.empty((window, len(idx), 2))
    gb = np.empty((window, len(idx), 2))
    for col, (i, s) in enumerate(zip(idx, starts)):
        a, b = pairs[i].arrays()
        ga[:, col, :] = a[s : s + window]
        gb[:, col, :] = b[s : s + window]
    return ga, gb


def train_tpn(
    pairs: list[TrajectoryPair],
    cfg: TpnTrainConfig,
    seed: int,
) -> tuple[TpnModel, list[dict]]:
    """Two-stage training over sampled windows; one batch per epoch.

    Deterministic given (pairs, cfg, seed).  Returns the model and a log of
    per-epoch records {epoch, batch, stage1_loss, stage2_loss}.
    """
    if not pairs:
        raise ValueError("training dataset is empty")
    root = np.random.SeedSequence(seed)
    init_rng, sample_rng = (np.random.default_rng(s) for s in root.spawn(2))

    model = init_model(cfg.model, init_rng, motion_scale=motion_scale_of(pairs, cfg.scale_percentile))
    log: list[dict] = []
    if cfg.epochs == 0:
        return model, log

    lengths = [len(p.view_a) for p in pairs]
    if min(lengths) < cfg.window:
        raise ValueError("every pair must span at least one full window")

    fit_m = cfg.fit_window - 3  # smoothed motions available in the fit window
    for epoch in range(cfg.epochs):
        idx = sample_rng.integers(0, len(pairs), size=cfg.n_b)
        starts = np.array([sample_rng.integers(0, lengths[i] - cfg.window + 1) for i in idx])
        ga, gb = _window_arrays(pairs, idx, starts, cfg.window)
        src = motion_sequence(ga) / model.motion_scale   # (window-3, B, 2)
        tgt = motion_sequence(gb) / model.motion_scale
        gb_n = gb / model.motion_scale
        g0 = gb_n[2]              # motion t approximates the step into point t+3
        gt_pos = gb_n[3:]

        hidden = random_hidden(cfg.model, cfg.n_b, sample_rng)
        hidden, s1_loss = _fit_hidden_arrays(
            model.params, hidden, src[:fit_m], tgt[:fit_m], cfg.lambda1, cfg.stage1_iters, cfg.model
        )

        joint = {f"theta.{k}": v for k, v in model.params.items()}
        joint.update({f"h.{k}": v for k, v in hidden.items()})
        opt = Rprop(joint)
        s2_loss = np.inf
        for _ in range(cfg.stage2_iters):
            theta = {k[6:]: v for k, v in joint.items() if k.startswith("theta.")}
            hid = {k[2:]: v for k, v in joint.items() if k.startswith("h.")}
            s2_loss, theta_g, hidden_g = stage2_loss_grads(
                theta, hid, src, tgt, g0, gt_pos, cfg.lambda1, cfg.lambda2, cfg.model
            )
            grads = {f"theta.{k}": v for k, v in theta_g.items()}
            grads.update({f"h.{k}": v for k, v in hidden_g.items()})
            opt.update(joint, grads)
            if opt.at_floor():
                break
        model.params = {k[6:]: v for k, v in joint.items() if k.startswith("theta.")}
        log.append(
            {"epoch": epoch, "batch": 0, "stage1_loss": float(s1_loss), "stage2_loss": float(s2_loss)}
        )
    return model, log


_MODEL_MAGIC = b"MVTP"


def save_model(model: TpnModel, path) -> None:
    """Binary snapshot: config header + little-endian float64 parameters."""
    cfg = model.config
    header = _MODEL_MAGIC + struct.pack(
        "<IIIIId", 1, cfg.enc_dim, cfg.hidden, cfg.h_p_dim, cfg.dec_hidden, model.motion_scale
    )
    chunks = [np.ascontiguousarray(model.params[name].astype("<f8")).tobytes() for name in PARAM_ORDER]
    with open(path, "wb") as fh:
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_model(path) -> TpnModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MODEL_MAGIC:
        raise ValueError("not a model snapshot")
    version, enc_dim, hidden, h_p_dim, dec_hidden, scale = struct.unpack("<IIIIId", blob[4 : 4 + 28])
    if version != 1:
        raise ValueError(f"unsupported snapshot version {version}")
    cfg = TpnConfig(enc_dim=enc_dim, hidden=hidden, h_p_dim=h_p_dim, dec_hidden=dec_hidden)
    offset = 4 + 28
    params = {}
    for name, shape in param_shapes(cfg).items():
        count = int(np.prod(shape))
        arr = np.frombuffer(blob[offset : offset + 8 * count], dtype="<f8").reshape(shape)
        params[name] = arr.astype(np.float64)
        offset += 8 * count
    return TpnModel(config=cfg, params=params, motion_scale=scale)
