"""CSV ingestion of stays and binary persistence of preprocessed datasets.

CSV layout: header ``stay_id,sample_index,<channel_1>,...``; one row per
5-minute tick; empty field (or ``NaN``) marks a missing sample.

Dataset directory: ``meta.json`` plus ``train.vsw``, ``validation.vsw``,
``test.vsw``.  Each ``.vsw`` file is ``VSW1``, u32 count, u32 T, u32 C,
one u8 label per example, then row-major little-endian f64 values.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ahe_slsh.errors import DataError
from ahe_slsh.signal_core.core import DatasetSplit, LabeledExample, StayRecord, VitalWindow

VSW_MAGIC = b"VSW1"
_MISSING_TOKENS = {"", "nan", "NaN", "NAN"}
SPLIT_NAMES = ("train", "validation", "test")


def load_csv(path, channels: Sequence[str] | None = None) -> list[StayRecord]:
    """Read stays from a CSV file.

    If ``channels`` is given it acts as the schema: every header channel
    must belong to it and every schema channel must be present.  Gaps in
    ``sample_index`` become missing rows.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such CSV file")
    rows: dict[str, dict[int, list[float]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["stay_id", "sample_index"] or len(header) < 3:
            raise DataError(f"{path}:1: header must start with stay_id,sample_index and name "
                            f"at least one channel")
        names = header[2:]
        if len(set(names)) != len(names):
            raise DataError(f"{path}:1: duplicate channel names in header")
        if channels is not None:
            unknown = [n for n in names if n not in channels]
            if unknown:
                raise DataError(f"{path}:1: unknown channel(s) {unknown}")
            absent = [n for n in channels if n not in names]
            if absent:
                raise DataError(f"{path}:1: schema channel(s) {absent} missing from header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            stay_id = row[0].strip()
            if not stay_id:
                raise DataError(f"{path}:{lineno}: empty stay_id")
            try:
                idx = int(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: sample_index {row[1]!r} is not an integer") from None
            if idx < 0:
                raise DataError(f"{path}:{lineno}: negative sample_index {idx}")
            values = []
            for name, field in zip(names, row[2:]):
                field = field.strip()
                if field in _MISSING_TOKENS:
                    values.append(math.nan)
                    continue
                try:
                    v = float(field)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: {name}={field!r} is not a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: {name}={field!r} is not finite")
                values.append(v)
            stay_rows = rows.setdefault(stay_id, {})
            if idx in stay_rows:
                raise DataError(f"{path}:{lineno}: duplicate row for stay {stay_id!r} index {idx}")
            stay_rows[idx] = values
    if not rows:
        raise DataError(f"{path}: no data rows")

    order = list(channels) if channels is not None else names
    perm = [names.index(n) for n in order]
    stays = []
    for stay_id, stay_rows in rows.items():
        lo, hi = min(stay_rows), max(stay_rows)
        samples = np.full((hi - lo + 1, len(names)), np.nan)
        for idx, values in stay_rows.items():
            samples[idx - lo] = values
        samples = samples[:, perm]
        stays.append(StayRecord(stay_id, tuple(order), samples, ~np.isnan(samples)))
    return stays


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(stays: Iterable[StayRecord], path) -> None:
    stays = list(stays)
    if not stays:
        raise DataError("nothing to write")
    channels = stays[0].channels
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stay_id", "sample_index", *channels])
        for stay in stays:
            if stay.channels != channels:
                stay = stay.select_channels(channels)
            for t in range(stay.length):
                w.writerow([stay.stay_id, t, *(
                    _fmt(v) if m else "" for v, m in zip(stay.samples[t], stay.mask[t]))])


def _write_vsw(path: Path, examples: Sequence[LabeledExample], T: int, C: int) -> None:
    with path.open("wb") as fh:
        fh.write(VSW_MAGIC)
        fh.write(struct.pack("<III", len(examples), T, C))
        fh.write(bytes(ex.label for ex in examples))
        for ex in examples:
            fh.write(np.ascontiguousarray(ex.window.values, dtype="<f8").tobytes())


def _read_vsw(path: Path):
    data = path.read_bytes()
    if data[:4] != VSW_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}, expected {VSW_MAGIC!r}")
    if len(data) < 16:
        raise DataError(f"{path}: truncated header")
    n, T, C = struct.unpack_from("<III", data, 4)
    expected = 16 + n + 8 * n * T * C
    if len(data) != expected:
        raise DataError(f"{path}: size {len(data)} bytes, expected {expected}")
    labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=16)
    values = np.frombuffer(data, dtype="<f8", count=n * T * C, offset=16 + n).reshape(n, T, C)
    return labels.astype(int), values.astype(np.float64), T, C


def save_dataset(split: DatasetSplit, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    T, C = split.window_shape
    mean, std = split.normalization_stats if split.normalization_stats is not None else (None, None)
    meta = {
        "format": "VSW1",
        "channels": list(split.channels),
        "T": T,
        "C": C,
        "ratios": list(split.ratios),
        "seed": split.seed,
        "lead_minutes": split.lead_minutes,
        "normalization_stats": None if mean is None else {
            "mean": [_fmt(v) for v in mean], "std": [_fmt(v) for v in std]},
        "population_means": None if split.population_means is None else [
            _fmt(v) for v in split.population_means],
        "examples": {name: [[ex.window.source_stay, ex.window.window_start, ex.outcome_start]
                            for ex in part] for name, part in split.parts().items()},
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    for name, part in split.parts().items():
        _write_vsw(d / f"{name}.vsw", part, T, C)
    return d


def load_dataset(directory) -> DatasetSplit:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{d}: not a dataset directory (meta.json missing)") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{d}/meta.json: {exc}") from None
    lead = meta.get("lead_minutes") or 0
    parts = {}
    for name in SPLIT_NAMES:
        labels, values, T, C = _read_vsw(d / f"{name}.vsw")
        if (T, C) != (meta["T"], meta["C"]):
            raise DataError(f"{d}/{name}.vsw: shape ({T},{C}) disagrees with meta.json")
        info = meta.get("examples", {}).get(name) or [["", 0, -1]] * len(labels)
        parts[name] = [
            LabeledExample(VitalWindow(values[i], np.ones((T, C), dtype=bool), str(src), int(start)),
                           int(labels[i]), int(lead), int(outcome))
            for i, (src, start, outcome) in enumerate(info)]
    stats = meta.get("normalization_stats")
    pop = meta.get("population_means")
    return DatasetSplit(
        parts["train"], parts["validation"], parts["test"],
        channels=tuple(meta["channels"]),
        normalization_stats=None if stats is None else (
            np.array([float(v) for v in stats["mean"]]), np.array([float(v) for v in stats["std"]])),
        population_means=None if pop is None else np.array([float(v) for v in pop]),
        seed=int(meta["seed"]), ratios=tuple(meta["ratios"]),
        lead_minutes=meta.get("lead_minutes"))
