from .model import METADATA_MODES, FactorizationModel, identity_user_features
from .training import TrainConfig, bpr_step, pair_gradients, train, warp_rank_weights, warp_step

__all__ = [
    "METADATA_MODES",
    "FactorizationModel",
    "TrainConfig",
    "bpr_step",
    "identity_user_features",
    "pair_gradients",
    "train",
    "warp_rank_weights",
    "warp_step",
]
