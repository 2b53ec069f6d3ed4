from .model import (
    DecoderParams,
    EncoderParams,
    ModelDims,
    decoder_forward,
    encoder_forward,
    input_embedding,
    layer_norm,
    multi_head_self_attention,
)
from .training import TrainConfig, load_checkpoint, oracle_estimator, persistence_baseline, save_checkpoint, train

__all__ = [
    "DecoderParams",
    "EncoderParams",
    "ModelDims",
    "TrainConfig",
    "decoder_forward",
    "encoder_forward",
    "input_embedding",
    "layer_norm",
    "load_checkpoint",
    "multi_head_self_attention",
    "oracle_estimator",
    "persistence_baseline",
    "save_checkpoint",
    "train",
]
