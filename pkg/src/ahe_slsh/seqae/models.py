"""Sequence-to-sequence GRU auto-encoders: SS, BSS, HSS and BHSS.

The encoder is a list of stages, each stage holding one GRU per direction.
Flat models (SS/BSS) stack stages over the full sequence; hierarchical
models (HSS/BHSS) have exactly two stages, the first run independently on
each section of ``section_len`` samples and the second over the resulting
sub-contexts.  The decoder starts from the context, feeds back its own
previous output (zero on the first step), and emits the sequence in
reverse time order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ahe_slsh.errors import ConfigError
from ahe_slsh.seqae import kernels
from ahe_slsh.seqae.gru import GruParams, GruTape

ARCHITECTURES = ("SS", "BSS", "HSS", "BHSS")
# (bidirectional, hierarchical)
_ARCH_FLAGS = {"SS": (False, False), "BSS": (True, False), "HSS": (False, True), "BHSS": (True, True)}


@dataclass
class SeqAeModel:
    architecture: str
    hidden: int
    channels: int
    encoder: list[list[GruParams]]
    decoder: GruParams
    V: np.ndarray
    c: np.ndarray
    section_len: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        dirs = 2 if self.bidirectional else 1
        if self.hierarchical and (len(self.encoder) != 2 or self.section_len < 1):
            raise ConfigError("hierarchical models need two encoder levels and section_len >= 1")
        for stage in self.encoder:
            if len(stage) != dirs:
                raise ConfigError(f"{self.architecture} expects {dirs} direction(s) per encoder stage")
        if self.decoder.hidden_size != self.context_dim or self.decoder.input_size != self.channels:
            raise ConfigError("decoder must map C inputs to a context_dim hidden state")
        if self.V.shape != (self.channels, self.context_dim) or self.c.shape != (self.channels,):
            raise ConfigError(f"output projection must be ({self.channels}, {self.context_dim})")

    @property
    def bidirectional(self) -> bool:
        return _ARCH_FLAGS[self.architecture][0]

    @property
    def hierarchical(self) -> bool:
        return _ARCH_FLAGS[self.architecture][1]

    @property
    def context_dim(self) -> int:
        return 2 * self.hidden if self.bidirectional else self.hidden

    @property
    def layers(self) -> int:
        return len(self.encoder)

    @property
    def model_id(self) -> str:
        h = hashlib.sha256()
        for arr in self.named_tensors().values():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return f"{self.architecture}-{h.hexdigest()[:12]}"

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, stage in enumerate(self.encoder):
            for d, gru in zip("fb", stage):
                for name, arr in gru.tensors().items():
                    out[f"enc{i}.{d}.{name}"] = arr
        for name, arr in self.decoder.tensors().items():
            out[f"dec.{name}"] = arr
        out["out.V"] = self.V
        out["out.c"] = self.c
        return out

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "SeqAeModel":
        def gru(prefix):
            return GruParams(**{k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})

        encoder = [[gru(f"enc{i}.{d}.") for d in "fb"[:len(stage)]]
                   for i, stage in enumerate(self.encoder)]
        return SeqAeModel(self.architecture, self.hidden, self.channels, encoder, gru("dec."),
                          tensors["out.V"], tensors["out.c"], self.section_len)


@dataclass
class ContextVector:
    values: np.ndarray
    model_id: str = ""
    example_id: object = None

    def __len__(self):
        return len(self.values)


def init_model(architecture: str, channels: int, hidden: int = 64, section_len: int = 0,
               layers: int = 1, seed: int = 0) -> SeqAeModel:
    """Freshly initialized model with seeded scaled-uniform weights."""
    if architecture not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {architecture!r}; choose from {ARCHITECTURES}")
    bidir, hier = _ARCH_FLAGS[architecture]
    dirs = 2 if bidir else 1
    if hier:
        if section_len < 1:
            raise ConfigError(f"{architecture} needs section_len >= 1")
        if layers != 1:
            raise ConfigError("stacked encoder layers are only supported for SS/BSS")
        n_stages = 2
    else:
        if layers < 1:
            raise ConfigError("layers must be >= 1")
        section_len = 0
        n_stages = layers
    rng = np.random.default_rng(seed)
    encoder = []
    in_dim = channels
    for _ in range(n_stages):
        encoder.append([GruParams.init(in_dim, hidden, rng) for _ in range(dirs)])
        in_dim = hidden * dirs
    ctx = hidden * dirs
    decoder = GruParams.init(channels, ctx, rng)
    lim = np.sqrt(6.0 / (channels + ctx))
    V = rng.uniform(-lim, lim, size=(channels, ctx))
    return SeqAeModel(architecture, hidden, channels, encoder, decoder, V, np.zeros(channels), section_len)


# -- encoder -----------------------------------------------------------------

def _tape(params: GruParams, rows: int):
    fast = kernels.use_kernels(rows, params.hidden_size)
    return kernels.FastTape(params) if fast else GruTape(params)


def _stage_forward(stage: list[GruParams], X: np.ndarray):
    """Run one encoder stage; returns aligned state sequence, final state and tapes."""
    B = X.shape[0]
    H = stage[0].hidden_size
    fwd = _tape(stage[0], B)
    Hf = fwd.run(X, np.zeros((B, H)))
    if len(stage) == 1:
        return Hf, Hf[:, -1], [fwd]
    bwd = _tape(stage[1], B)
    Hb = bwd.run(X[:, ::-1], np.zeros((B, H)))[:, ::-1]
    # backward direction finishes at aligned index 0
    return np.concatenate([Hf, Hb], axis=-1), np.concatenate([Hf[:, -1], Hb[:, 0]], axis=-1), [fwd, bwd]


def _stage_backward(tapes: list[GruTape], dH: np.ndarray):
    H = tapes[0].p.hidden_size
    dX, _, gf = tapes[0].backward(dH[..., :H])
    grads = [gf]
    if len(tapes) == 2:
        dXb, _, gb = tapes[1].backward(dH[:, ::-1, H:])
        dX = dX + dXb[:, ::-1]
        grads.append(gb)
    return dX, grads


def _check_input(model: SeqAeModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != model.channels or X.shape[1] < 1:
        raise ConfigError(f"input of shape {X.shape} does not match a model with {model.channels} channels")
    if model.hierarchical and X.shape[1] % model.section_len:
        raise ConfigError(f"sequence length T={X.shape[1]} is not divisible by "
                          f"section_len={model.section_len}")
    return X


def _encode_forward(model: SeqAeModel, X: np.ndarray):
    B, T, _ = X.shape
    if model.hierarchical:
        s = model.section_len
        n = T // s
        sections = X.reshape(B * n, s, X.shape[2])
        _, sub, tapes0 = _stage_forward(model.encoder[0], sections)
        sub = sub.reshape(B, n, -1)
        _, ctx, tapes1 = _stage_forward(model.encoder[1], sub)
        return ctx, (tapes0, tapes1, (B, T, n))
    tapes = []
    inp = X
    for stage in model.encoder:
        inp, ctx, t = _stage_forward(stage, inp)
        tapes.append(t)
    return ctx, (tapes, X.shape)


def _final_grad(dctx: np.ndarray, steps: int, hidden: int, bidirectional: bool) -> np.ndarray:
    """Scatter a final-state gradient onto an aligned state sequence."""
    B = dctx.shape[0]
    dH = np.zeros((B, steps, dctx.shape[1]))
    dH[:, -1, :hidden] = dctx[:, :hidden]
    if bidirectional:
        dH[:, 0, hidden:] = dctx[:, hidden:]
    return dH


def _encode_backward(model: SeqAeModel, cache, dctx: np.ndarray) -> list[list[GruParams]]:
    H, bidir = model.hidden, model.bidirectional
    if model.hierarchical:
        tapes0, tapes1, (B, T, n) = cache
        s = model.section_len
        dsub, g1 = _stage_backward(tapes1, _final_grad(dctx, n, H, bidir))
        dsub = dsub.reshape(B * n, -1)
        _, g0 = _stage_backward(tapes0, _final_grad(dsub, s, H, bidir))
        return [g0, g1]
    tapes, shape = cache
    grads = [None] * len(tapes)
    dH = _final_grad(dctx, shape[1], H, bidir)
    for i in range(len(tapes) - 1, -1, -1):
        dX, grads[i] = _stage_backward(tapes[i], dH)
        dH = dX
    return grads


def encode_batch(model: SeqAeModel, X) -> np.ndarray:
    """Context vectors for a batch X of shape (B, T, C); returns (B, context_dim)."""
    X = _check_input(model, X)
    ctx, _ = _encode_forward(model, X)
    return ctx


def encode(model: SeqAeModel, X, example_id=None) -> ContextVector:
    ctx = encode_batch(model, np.asarray(X)[None] if np.ndim(X) == 2 else X)
    if ctx.shape[0] != 1:
        raise ConfigError("encode takes a single T x C window; use encode_batch for batches")
    return ContextVector(ctx[0], model.model_id, example_id)


# -- decoder -----------------------------------------------------------------

def _decode_forward(model: SeqAeModel, ctx: np.ndarray, T: int):
    if kernels.use_kernels(ctx.shape[0], model.context_dim):
        outs, cache = kernels.decoder_forward(model.decoder, model.V, model.c, ctx, T)
        return outs[:, ::-1], ("fast", cache)
    B = ctx.shape[0]
    tape = GruTape(model.decoder)
    hs = np.empty((B, T, model.context_dim))
    outs = np.empty((B, T, model.channels))
    h = ctx
    y = np.zeros((B, model.channels))
    for k in range(T):
        h = tape.step(y, h)
        y = h @ model.V.T + model.c
        hs[:, k] = h
        outs[:, k] = y
    # outs[:, k] reconstructs time T-1-k
    return outs[:, ::-1], (tape, hs)


def _decode_backward(model: SeqAeModel, cache, dY: np.ndarray):
    tape, hs = cache
    dO = dY[:, ::-1]
    if tape == "fast":
        return kernels.decoder_backward(model.decoder, model.V, hs, dO)
    dV = np.einsum("bkc,bkh->ch", dO, hs)
    dc = dO.sum(axis=(0, 1))
    dH = dO @ model.V
    acc = {"V": dV, "c": dc}

    def hook(t, dx):
        # input of step t is the output emitted at step t-1
        if t == 0:
            return None
        acc["V"] += dx.T @ hs[:, t - 1]
        acc["c"] += dx.sum(axis=0)
        return dx @ model.V

    _, dctx, gdec = tape.backward(dH, step_hook=hook)
    return dctx, gdec, acc["V"], acc["c"]


def decode(model: SeqAeModel, context, T: int) -> np.ndarray:
    """Reconstruct a T x C window (time-aligned with the input) from a context."""
    values = context.values if isinstance(context, ContextVector) else np.asarray(context, dtype=np.float64)
    single = values.ndim == 1
    ctx = values[None] if single else values
    if ctx.shape[-1] != model.context_dim:
        raise ConfigError(f"context length {ctx.shape[-1]} != model context_dim {model.context_dim}")
    if T < 1:
        raise ConfigError("T must be >= 1")
    Y, _ = _decode_forward(model, ctx, T)
    return Y[0] if single else Y


def reconstruct(model: SeqAeModel, X) -> np.ndarray:
    X = _check_input(model, X)
    return decode(model, encode_batch(model, X), X.shape[1])


# -- loss and gradients -------------------------------------------------------

def reconstruction_loss(X, Y) -> float:
    """Sum of squared errors over every aligned entry of one window."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ConfigError(f"shape mismatch: {X.shape} vs {Y.shape}")
    return float(np.sum((X - Y) ** 2))


def batch_loss(model: SeqAeModel, X) -> float:
    """Mean over the batch of per-example reconstruction losses."""
    X = _check_input(model, X)
    Y = reconstruct(model, X)
    return float(np.mean(np.sum((X - Y) ** 2, axis=(1, 2))))


def loss_and_gradients(model: SeqAeModel, X) -> tuple[float, dict[str, np.ndarray]]:
    """Batch loss and its exact gradient for every named tensor of the model."""
    X = _check_input(model, X)
    B, T, _ = X.shape
    ctx, enc_cache = _encode_forward(model, X)
    Y, dec_cache = _decode_forward(model, ctx, T)
    diff = Y - X
    # overflow surfaces as a non-finite loss, which the trainer reports
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(np.sum(diff * diff, axis=(1, 2))))
    dY = 2.0 * diff / B
    dctx, gdec, dV, dc = _decode_backward(model, dec_cache, dY)
    genc = _encode_backward(model, enc_cache, dctx)
    grads = {}
    for i, stage in enumerate(genc):
        for d, g in zip("fb", stage):
            for name, arr in g.tensors().items():
                grads[f"enc{i}.{d}.{name}"] = arr
    for name, arr in gdec.tensors().items():
        grads[f"dec.{name}"] = arr
    grads["out.V"] = dV
    grads["out.c"] = dc
    return loss, grads


def gradients(model: SeqAeModel, batch) -> dict[str, np.ndarray]:
    if len(batch) == 0:
        raise ConfigError("gradients need a non-empty batch")
    return loss_and_gradients(model, np.stack([np.asarray(x, dtype=np.float64) for x in batch]))[1]
