from mvtrack.tpn.model import (
    HiddenParams,
    TpnConfig,
    TpnModel,
    init_model,
    tpn_forward,
)
from mvtrack.tpn.motion import (
    integrate,
    momentum_fallback,
    motion_sequence,
    smooth_motion,
)
from mvtrack.tpn.predict import (
    InsufficientHistoryError,
    predict_fused,
    predict_trajectory,
)
from mvtrack.tpn.train import (
    TpnDivergedError,
    TpnTrainConfig,
    fit_hidden,
    load_model,
    save_model,
    train_tpn,
)

__all__ = [
    "HiddenParams",
    "TpnConfig",
    "TpnModel",
    "init_model",
    "tpn_forward",
    "integrate",
    "momentum_fallback",
    "motion_sequence",
    "smooth_motion",
    "InsufficientHistoryError",
    "predict_fused",
    "predict_trajectory",
    "TpnDivergedError",
    "TpnTrainConfig",
    "fit_hidden",
    "load_model",
    "save_model",
    "train_tpn",
]
