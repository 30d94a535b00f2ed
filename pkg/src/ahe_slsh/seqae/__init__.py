"""GRU sequence-to-sequence auto-encoders and their training loop."""

from ahe_slsh.seqae.adam import AdamState, adam_step
from ahe_slsh.seqae.gru import GruParams, GruTape, gru_step, sigmoid
from ahe_slsh.seqae.io import load_model, read_header, save_model
from ahe_slsh.seqae.models import (
    ARCHITECTURES,
    ContextVector,
    SeqAeModel,
    batch_loss,
    decode,
    encode,
    encode_batch,
    gradients,
    init_model,
    loss_and_gradients,
    reconstruct,
    reconstruction_loss,
)
from ahe_slsh.seqae.training import ModelConfig, Schedule, train

__all__ = [
    "ARCHITECTURES", "AdamState", "ContextVector", "GruParams", "GruTape", "ModelConfig",
    "Schedule", "SeqAeModel", "adam_step", "batch_loss", "decode", "encode", "encode_batch",
    "gradients", "gru_step", "init_model", "load_model", "loss_and_gradients", "read_header",
    "reconstruct", "reconstruction_loss", "save_model", "sigmoid", "train",
]
