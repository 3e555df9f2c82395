from .attention import attention_pool, masked_softmax
from .gru import gru_cell_forward
from .han import (
    EncoderConfig,
    EncoderParams,
    bce_loss,
    forward_document,
    init_params,
    loss_and_grads,
)
from .training import export_embeddings, train_encoder

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "attention_pool",
    "bce_loss",
    "export_embeddings",
    "forward_document",
    "gru_cell_forward",
    "init_params",
    "loss_and_grads",
    "masked_softmax",
    "train_encoder",
]
