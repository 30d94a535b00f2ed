"""Binary model files.

Layout (little-endian): ``SAE1``, u8 architecture tag, u32 hidden size,
u32 channel count, u32 section_len (0 when unused), u32 encoder stage
count, then every tensor in :meth:`SeqAeModel.named_tensors` order as
u32 rows, u32 cols and row-major f64 data.  Vectors are stored as n x 1.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ahe_slsh.errors import DataError
from ahe_slsh.seqae.models import ARCHITECTURES, SeqAeModel, init_model

MAGIC = b"SAE1"
_HEADER = struct.Struct("<4sBIIII")


def save_model(model: SeqAeModel, path) -> None:
    parts = [_HEADER.pack(MAGIC, ARCHITECTURES.index(model.architecture), model.hidden,
                          model.channels, model.section_len, model.layers)]
    for arr in model.named_tensors().values():
        mat = arr.reshape(arr.shape[0], -1)
        parts.append(struct.pack("<II", *mat.shape))
        parts.append(np.ascontiguousarray(mat, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_header(path) -> dict:
    data = Path(path).read_bytes()[:_HEADER.size]
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated model header")
    magic, tag, H, C, s, layers = _HEADER.unpack(data)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r} (wrong file or version)")
    if tag >= len(ARCHITECTURES):
        raise DataError(f"{path}: unknown architecture tag {tag}")
    return {"architecture": ARCHITECTURES[tag], "hidden": H, "channels": C,
            "section_len": s, "layers": layers}


def load_model(path) -> SeqAeModel:
    head = read_header(path)
    data = Path(path).read_bytes()
    hier = head["architecture"] in ("HSS", "BHSS")
    skeleton = init_model(head["architecture"], head["channels"], head["hidden"],
                          head["section_len"], 1 if hier else head["layers"])
    offset = _HEADER.size
    tensors = {}
    for name, ref in skeleton.named_tensors().items():
        if offset + 8 > len(data):
            raise DataError(f"{path}: truncated before tensor {name}")
        rows, cols = struct.unpack_from("<II", data, offset)
        offset += 8
        want = ref.reshape(ref.shape[0], -1).shape
        if (rows, cols) != want:
            raise DataError(f"{path}: tensor {name} is {rows}x{cols}, expected {want[0]}x{want[1]}")
        n = rows * cols
        if offset + 8 * n > len(data):
            raise DataError(f"{path}: truncated inside tensor {name}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
        tensors[name] = arr.reshape(ref.shape)
        offset += 8 * n
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} unexpected trailing bytes")
    return skeleton.with_tensors(tensors)
