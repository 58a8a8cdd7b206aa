"""Cross-view motion mapping network: encoder, 2 stacked RNN layers, decoder.

Architecture (per time step, motion vector r_t of the source view in,
predicted motion vector of the target view out):

    e_t  = tanh(enc_W r_t + enc_b)                        encoder, 2 -> E
    p1_t = tanh(r1_Wx e_t  + r1_Wh p1_{t-1} + r1_b)       RNN layer 1, size N
    p2_t = tanh(r2_Wx p1_t + r2_Wh p2_{t-1} + r2_b)       RNN layer 2, size N
    d_t  = tanh(dec_W1 [p2_t ; h_p] + dec_b1)             decoder hidden
    o_t  = dec_W2 d_t + dec_b2                            output, -> 2

The initial state of RNN layer k is [h_rk ; 0]: a learnable half and a zero
half.  (h_r1, h_r2, h_p) are the per-view-pair hidden parameters; they carry
the camera geometry and are fitted per pair while the shared weights stay
frozen.

Everything below supports an optional batch axis.  Network weights may also
carry a leading batch axis (one independent weight set per pair), which is
how the all-parameters-online variant is fitted efficiently.

Gradients are computed by backpropagation through time; the reverse pass
stores per-step pre-activation gradients and contracts them against the
cached activations in single einsum calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TpnConfig:
    enc_dim: int = 128
    hidden: int = 64
    h_p_dim: int = 16
    dec_hidden: int = 64

    @property
    def h_r_dim(self) -> int:
        # learnable half of each RNN initial state; the rest is zeros
        return self.hidden // 2


@dataclass
class HiddenParams:
    """Per-pair learnable vectors: RNN seeds and the decoder geometry code."""

    h_r1: np.ndarray
    h_r2: np.ndarray
    h_p: np.ndarray

    def as_dict(self, batch: bool = False) -> dict[str, np.ndarray]:
        def prep(v):
            v = np.asarray(v, dtype=np.float64)
            return v[None] if (batch and v.ndim == 1) else v

        return {"h_r1": prep(self.h_r1), "h_r2": prep(self.h_r2), "h_p": prep(self.h_p)}

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "HiddenParams":
        def squeeze(v):
            return v[0] if v.ndim == 2 and v.shape[0] == 1 else v

        return cls(h_r1=squeeze(d["h_r1"]), h_r2=squeeze(d["h_r2"]), h_p=squeeze(d["h_p"]))


PARAM_ORDER = (
    "enc_W", "enc_b",
    "r1_Wx", "r1_Wh", "r1_b",
    "r2_Wx", "r2_Wh", "r2_b",
    "dec_W1", "dec_b1",
    "dec_W2", "dec_b2",
)


def param_shapes(cfg: TpnConfig) -> dict[str, tuple[int, ...]]:
    e, n, p, dh = cfg.enc_dim, cfg.hidden, cfg.h_p_dim, cfg.dec_hidden
    return {
        "enc_W": (e, 2), "enc_b": (e,),
        "r1_Wx": (n, e), "r1_Wh": (n, n), "r1_b": (n,),
        "r2_Wx": (n, n), "r2_Wh": (n, n), "r2_b": (n,),
        "dec_W1": (dh, n + p), "dec_b1": (dh,),
        "dec_W2": (2, dh), "dec_b2": (2,),
    }


@dataclass
class TpnModel:
    config: TpnConfig
    params: dict[str, np.ndarray]
    motion_scale: float = 1.0

    def copy(self) -> "TpnModel":
        return TpnModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.motion_scale)


def init_params(cfg: TpnConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, drawn in a fixed order."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def init_model(cfg: TpnConfig, rng: np.random.Generator | int, motion_scale: float = 1.0) -> TpnModel:
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return TpnModel(config=cfg, params=init_params(cfg, rng), motion_scale=motion_scale)


def zero_hidden(cfg: TpnConfig, batch: int) -> dict[str, np.ndarray]:
    return {
        "h_r1": np.zeros((batch, cfg.h_r_dim)),
        "h_r2": np.zeros((batch, cfg.h_r_dim)),
        "h_p": np.zeros((batch, cfg.h_p_dim)),
    }


def random_hidden(cfg: TpnConfig, batch: int, rng: np.random.Generator, scale: float = 0.1) -> dict[str, np.ndarray]:
    return {
        "h_r1": rng.normal(0.0, scale, (batch, cfg.h_r_dim)),
        "h_r2": rng.normal(0.0, scale, (batch, cfg.h_r_dim)),
        "h_p": rng.normal(0.0, scale, (batch, cfg.h_p_dim)),
    }


def _lin(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """w @ x for weights (o, i) or per-pair weights (B, o, i); x is (B, i)."""
    if w.ndim == 2:
        return x @ w.T
    return np.einsum("boi,bi->bo", w, x)


def _lin_t(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Transpose application w^T @ v used in the backward pass."""
    if w.ndim == 2:
        return v @ w
    return np.einsum("boi,bo->bi", w, v)


def forward(
    params: dict[str, np.ndarray],
    hidden: dict[str, np.ndarray],
    motions: np.ndarray,
    cfg: TpnConfig,
    want_cache: bool = False,
):
    """Run the network over a (T, B, 2) motion sequence.

    Returns (T, B, 2) outputs, plus the activation cache when requested.
    """
    r = np.asarray(motions, dtype=np.float64)
    t_len, batch, _ = r.shape
    n = cfg.hidden

    p1 = np.zeros((batch, n))
    p2 = np.zeros((batch, n))
    p1[:, : cfg.h_r_dim] = hidden["h_r1"]
    p2[:, : cfg.h_r_dim] = hidden["h_r2"]

    e_all = np.empty((t_len, batch, cfg.enc_dim))
    p1_all = np.empty((t_len + 1, batch, n))
    p2_all = np.empty((t_len + 1, batch, n))
    d_all = np.empty((t_len, batch, cfg.dec_hidden))
    out = np.empty((t_len, batch, 2))
    p1_all[0] = p1
    p2_all[0] = p2

    h_p = hidden["h_p"]
    for t in range(t_len):
        e = np.tanh(_lin(params["enc_W"], r[t]) + params["enc_b"])
        p1 = np.tanh(_lin(params["r1_Wx"], e) + _lin(params["r1_Wh"], p1) + params["r1_b"])
        p2 = np.tanh(_lin(params["r2_Wx"], p1) + _lin(params["r2_Wh"], p2) + params["r2_b"])
        u = np.concatenate([p2, h_p], axis=1)
        d = np.tanh(_lin(params["dec_W1"], u) + params["dec_b1"])
        o = _lin(params["dec_W2"], d) + params["dec_b2"]
        e_all[t], p1_all[t + 1], p2_all[t + 1], d_all[t], out[t] = e, p1, p2, d, o

    if not want_cache:
        return out
    cache = {"r": r, "e": e_all, "p1": p1_all, "p2": p2_all, "d": d_all, "h_p": h_p}
    return out, cache


def backward(
    params: dict[str, np.ndarray],
    cache: dict[str, np.ndarray],
    dout: np.ndarray,
    cfg: TpnConfig,
    want_theta: bool,
    want_hidden: bool,
):
    """BPTT.  dout is dLoss/d(outputs), shape (T, B, 2).

    Returns (theta_grads, hidden_grads); each may be None when not wanted.
    Theta gradients are summed over the batch for shared weights, or kept
    per pair when the weights carry a batch axis.
    """
    r, e_all, p1_all, p2_all, d_all = cache["r"], cache["e"], cache["p1"], cache["p2"], cache["d"]
    t_len, batch, _ = dout.shape
    n = cfg.hidden

    dzd_all = np.empty_like(d_all)
    dz1_all = np.empty_like(p1_all[:-1])
    dz2_all = np.empty_like(p2_all[:-1])
    dh_p = np.zeros((batch, cfg.h_p_dim))

    dp1_next = np.zeros((batch, n))
    dp2_next = np.zeros((batch, n))
    for t in range(t_len - 1, -1, -1):
        dd = _lin_t(params["dec_W2"], dout[t]) * (1.0 - d_all[t] ** 2)
        dzd_all[t] = dd
        du = _lin_t(params["dec_W1"], dd)
        dh_p += du[:, n:]
        dp2 = du[:, :n] + dp2_next
        dz2 = dp2 * (1.0 - p2_all[t + 1] ** 2)
        dz2_all[t] = dz2
        dp2_next = _lin_t(params["r2_Wh"], dz2)
        dp1 = _lin_t(params["r2_Wx"], dz2) + dp1_next
        dz1 = dp1 * (1.0 - p1_all[t + 1] ** 2)
        dz1_all[t] = dz1
        dp1_next = _lin_t(params["r1_Wh"], dz1)

    hidden_grads = None
    if want_hidden:
        hidden_grads = {
            "h_r1": dp1_next[:, : cfg.h_r_dim].copy(),
            "h_r2": dp2_next[:, : cfg.h_r_dim].copy(),
            "h_p": dh_p,
        }

    theta_grads = None
    if want_theta:
        batched = params["enc_W"].ndim == 3
        dze_all = _bp_through_encoder(params, dz1_all, e_all, batched)
        u_all = np.concatenate([p2_all[1:], np.broadcast_to(cache["h_p"], (t_len, batch, cfg.h_p_dim))], axis=2)
        theta_grads = {
            "enc_W": _weight_grad(dze_all, r, batched),
            "enc_b": _bias_grad(dze_all, batched),
            "r1_Wx": _weight_grad(dz1_all, e_all, batched),
            "r1_Wh": _weight_grad(dz1_all, p1_all[:-1], batched),
            "r1_b": _bias_grad(dz1_all, batched),
            "r2_Wx": _weight_grad(dz2_all, p1_all[1:], batched),
            "r2_Wh": _weight_grad(dz2_all, p2_all[:-1], batched),
            "r2_b": _bias_grad(dz2_all, batched),
            "dec_W1": _weight_grad(dzd_all, u_all, batched),
            "dec_b1": _bias_grad(dzd_all, batched),
            "dec_W2": _weight_grad(dout, d_all, batched),
            "dec_b2": _bias_grad(dout, batched),
        }
    return theta_grads, hidden_grads


def _weight_grad(dz: np.ndarray, act: np.ndarray, batched: bool) -> np.ndarray:
    """Sum_t outer(dz_t, act_t): per pair when weights are batched."""
    if batched:
        return np.matmul(dz.transpose(1, 2, 0), np.ascontiguousarray(act.transpose(1, 0, 2)))
    t_len, b, o = dz.shape
    return dz.reshape(t_len * b, o).T @ act.reshape(t_len * b, -1)


def _bias_grad(dz: np.ndarray, batched: bool) -> np.ndarray:
    return dz.sum(axis=0) if batched else dz.sum(axis=(0, 1))


def _bp_through_encoder(params, dz1_all, e_all, batched):
    if batched:
        # (B,T,N) @ (B,N,E) -> (B,T,E), back to time-major
        de = np.matmul(dz1_all.transpose(1, 0, 2), params["r1_Wx"]).transpose(1, 0, 2)
    else:
        de = dz1_all @ params["r1_Wx"]
    return de * (1.0 - e_all**2)


def tpn_forward(model: TpnModel, hidden: HiddenParams, motions: np.ndarray) -> np.ndarray:
    """Single-pair inference: (T, 2) raw motions in, (T, 2) raw motions out.

    Inputs are normalized by the model's motion scale and outputs rescaled.
    """
    r = np.asarray(motions, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != 2 or r.shape[0] < 1:
        raise ValueError("expected a non-empty (T, 2) motion sequence")
    scale = model.motion_scale
    out = forward(model.params, hidden.as_dict(batch=True), r[:, None, :] / scale, model.config)
    return out[:, 0, :] * scale
