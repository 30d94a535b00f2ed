from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ahe_slsh.errors import ConfigError, NumericError
from ahe_slsh.seqae.adam import AdamState, adam_step
from ahe_slsh.seqae.models import SeqAeModel, init_model, loss_and_gradients

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    architecture: str = "BSS"
    hidden: int = 64
    section_len: int = 0
    layers: int = 1


@dataclass
class Schedule:
    epochs: int = 1000
    lr: float = 1e-4
    batch_size: int = 64
    seed: int = 0


def train(config: ModelConfig, data, schedule: Schedule = Schedule(),
          on_epoch: Callable[[int, SeqAeModel, float], None] | None = None,
          model: SeqAeModel | None = None):
    """Fit an auto-encoder to ``data`` of shape (N, T, C) with minibatch Adam.

    Returns ``(model, history)`` where ``history[e]`` is the mean per-example
    loss over epoch ``e`` (each batch measured before its update).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[0] == 0:
        raise ConfigError(f"training data must be a non-empty (N, T, C) array, got {data.shape}")
    if schedule.batch_size < 1 or schedule.epochs < 0:
        raise ConfigError("batch_size must be >= 1 and epochs >= 0")
    N = data.shape[0]
    if model is None:
        model = init_model(config.architecture, data.shape[2], config.hidden, config.section_len,
                           config.layers, seed=schedule.seed)
    # separate stream so the shuffle order does not depend on model size
    rng = np.random.default_rng([schedule.seed, 1])
    params = model.named_tensors()
    state = AdamState.for_params(params, lr=schedule.lr)
    history = []
    for epoch in range(schedule.epochs):
        order = rng.permutation(N)
        total = 0.0
        for b, start in enumerate(range(0, N, schedule.batch_size)):
            idx = order[start:start + schedule.batch_size]
            loss, grads = loss_and_gradients(model, data[idx])
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise NumericError(f"non-finite loss or gradient at epoch {epoch + 1}, batch {b + 1}")
            total += loss * len(idx)
            params, state = adam_step(state, params, grads)
            model = model.with_tensors(params)
        history.append(total / N)
        log.debug("epoch %d loss %.6g", epoch + 1, history[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, model, history[-1])
    return model, history
