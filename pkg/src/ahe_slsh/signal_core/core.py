from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ahe_slsh.errors import ConfigError, DataError

MINUTES_PER_SAMPLE = 5
AHE_THRESHOLD_MMHG = 60.0
# 30 minutes at 5-minute resolution
AHE_MIN_SAMPLES = 6
DEFAULT_RATIOS = (81, 9, 10)
DEGENERATE_STD = 1e-12

POSITIVE = 1
NEGATIVE = 0


@dataclass
class StayRecord:
    """One ICU stay: a T_total x C matrix of 5-minute samples plus presence mask."""

    stay_id: str
    channels: tuple[str, ...]
    samples: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.channels:
            raise DataError(f"stay {self.stay_id}: empty channel list")
        if len(set(self.channels)) != len(self.channels):
            raise DataError(f"stay {self.stay_id}: duplicate channel names")
        if self.samples.ndim != 2 or self.samples.shape != self.mask.shape:
            raise DataError(
                f"stay {self.stay_id}: samples {self.samples.shape} and mask "
                f"{self.mask.shape} must be identical 2-D shapes"
            )
        if self.samples.shape[0] < 1 or self.samples.shape[1] != len(self.channels):
            raise DataError(f"stay {self.stay_id}: shape {self.samples.shape} "
                            f"does not match {len(self.channels)} channels")

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise ConfigError(f"stay {self.stay_id} has no channel named {name!r}") from None

    def select_channels(self, names: Sequence[str]) -> "StayRecord":
        idx = [self.channel_index(n) for n in names]
        return StayRecord(self.stay_id, tuple(names), self.samples[:, idx], self.mask[:, idx])


@dataclass
class VitalWindow:
    values: np.ndarray
    mask: np.ndarray
    source_stay: str = ""
    window_start: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class LabeledExample:
    window: VitalWindow
    label: int
    lead_minutes: int
    # start index of the outcome segment within the source stay
    outcome_start: int = -1

    def __post_init__(self):
        if self.lead_minutes % MINUTES_PER_SAMPLE:
            raise ConfigError(f"lead_minutes={self.lead_minutes} is not a multiple of 5")


@dataclass
class DatasetSplit:
    train: list[LabeledExample]
    validation: list[LabeledExample]
    test: list[LabeledExample]
    channels: tuple[str, ...] = ()
    normalization_stats: tuple[np.ndarray, np.ndarray] | None = None
    population_means: np.ndarray | None = None
    seed: int = 0
    ratios: tuple[int, int, int] = DEFAULT_RATIOS
    lead_minutes: int | None = None
    extra: dict = field(default_factory=dict)

    def parts(self) -> dict[str, list[LabeledExample]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    @property
    def window_shape(self) -> tuple[int, int]:
        for part in (self.train, self.validation, self.test):
            if part:
                return part[0].window.shape
        raise DataError("dataset split holds no examples")


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, end) runs of True in a 1-D boolean array."""
    if flags.size == 0:
        return []
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e)) for s, e in zip(edges[::2], edges[1::2])]


def detect_ahe(map_series, map_mask=None, threshold: float = AHE_THRESHOLD_MMHG,
               min_samples: int = AHE_MIN_SAMPLES) -> list[tuple[int, int]]:
    """Return maximal half-open intervals where MAP stays at or below ``threshold``.

    A qualifying interval needs at least ``min_samples`` consecutive present
    samples; a missing sample breaks the run.
    """
    series = np.asarray(map_series, dtype=np.float64)
    present = np.ones(series.shape, dtype=bool) if map_mask is None else np.asarray(map_mask, bool)
    if series.size < min_samples:
        return []
    with np.errstate(invalid="ignore"):
        low = present & (series <= threshold)
    return [(s, e) for s, e in _runs(low) if e - s >= min_samples]


def _window_samples(window_hours: float) -> int:
    n = window_hours * 60 / MINUTES_PER_SAMPLE
    if n < 1 or abs(n - round(n)) > 1e-9:
        raise ConfigError(f"window of {window_hours} h is not a whole number of 5-minute samples")
    return int(round(n))


def extract_examples(stay: StayRecord, lead_minutes: int, window_hours: float = 6,
                     map_channel: str = "MAP") -> list[LabeledExample]:
    """Cut one lead-time-offset window per outcome segment of a stay.

    Positives come from AHE intervals; negatives from non-overlapping
    30-minute blocks whose MAP samples are all present and above threshold.
    Each window ends exactly ``lead_minutes / 5`` samples before its segment.
    """
    if lead_minutes % MINUTES_PER_SAMPLE:
        raise ConfigError(f"lead_minutes={lead_minutes} is not a multiple of 5")
    T = _window_samples(window_hours)
    lead = lead_minutes // MINUTES_PER_SAMPLE
    m = stay.channel_index(map_channel)
    map_series, map_mask = stay.samples[:, m], stay.mask[:, m]

    out = []

    def emit(outcome_start: int, label: int):
        end = outcome_start - lead
        start = end - T
        if start < 0:
            return
        out.append(LabeledExample(
            VitalWindow(stay.samples[start:end].copy(), stay.mask[start:end].copy(),
                        stay.stay_id, start),
            label, lead_minutes, outcome_start))

    for s, _ in detect_ahe(map_series, map_mask):
        emit(s, POSITIVE)

    with np.errstate(invalid="ignore"):
        clear = map_mask & (map_series > AHE_THRESHOLD_MMHG)
    block = AHE_MIN_SAMPLES
    for s in range(T + lead, stay.length - block + 1, block):
        if clear[s:s + block].all():
            emit(s, NEGATIVE)
    out.sort(key=lambda ex: ex.outcome_start)
    return out


def impute(window: VitalWindow, population_means) -> VitalWindow:
    """Fill gaps per channel: interpolate inside, back/forward fill at the edges.

    Channels with no present sample take the population mean.  Present
    samples are left untouched.
    """
    means = np.asarray(population_means, dtype=np.float64)
    T, C = window.values.shape
    if means.shape != (C,):
        raise ConfigError(f"need {C} population means, got shape {means.shape}")
    values = np.array(window.values, dtype=np.float64, copy=True)
    mask = np.asarray(window.mask, dtype=bool)
    t = np.arange(T)
    for c in range(C):
        present = mask[:, c]
        if present.all():
            continue
        if not present.any():
            if not np.isfinite(means[c]):
                raise ConfigError(f"population mean for channel {c} is not finite")
            values[:, c] = means[c]
            continue
        # np.interp holds the end values constant outside the data range,
        # which is exactly back-fill before the first and forward-fill after the last
        missing = ~present
        values[missing, c] = np.interp(t[missing], t[present], values[present, c])
    return VitalWindow(values, np.ones((T, C), dtype=bool), window.source_stay, window.window_start)


def channel_exclusion(stays: Sequence[StayRecord], threshold: float = 0.85) -> list[str]:
    """Channels whose missing fraction over all stays is not above ``threshold``."""
    if not stays:
        raise DataError("channel_exclusion needs at least one stay")
    channels = stays[0].channels
    missing = np.zeros(len(channels))
    total = 0
    for stay in stays:
        if stay.channels != channels:
            stay = stay.select_channels(channels)
        missing += (~stay.mask).sum(axis=0)
        total += stay.length
    # compare counts, not floats, so exactly-85% sits on the retained side
    kept = [name for name, miss in zip(channels, missing) if miss <= threshold * total + 1e-9 * total]
    if not kept:
        raise DataError(f"every channel is missing more than {threshold:.0%} of its samples")
    return kept


def compute_population_means(examples: Sequence[LabeledExample]) -> np.ndarray:
    """Per-channel mean over every present sample of the given examples."""
    total = None
    count = None
    for ex in examples:
        v, m = ex.window.values, ex.window.mask
        s = np.where(m, v, 0.0).sum(axis=0)
        total = s if total is None else total + s
        n = m.sum(axis=0)
        count = n if count is None else count + n
    if total is None:
        raise DataError("cannot compute population means from zero examples")
    with np.errstate(invalid="ignore", divide="ignore"):
        return total / count


def impute_split(split: DatasetSplit, population_means=None) -> DatasetSplit:
    """Impute every window, with population means taken from the train split."""
    means = compute_population_means(split.train) if population_means is None else np.asarray(population_means)

    def fill(part):
        return [replace(ex, window=impute(ex.window, means)) for ex in part]

    return replace(split, train=fill(split.train), validation=fill(split.validation),
                   test=fill(split.test), population_means=means)


def _stack(examples: Sequence[LabeledExample]) -> np.ndarray:
    return np.stack([ex.window.values for ex in examples])


def _divisor(std: np.ndarray) -> np.ndarray:
    return np.where(std < DEGENERATE_STD, 1.0, std)


def normalize(split: DatasetSplit) -> DatasetSplit:
    """Standardize every channel with statistics computed on the train split only."""
    if not split.train:
        raise DataError("cannot normalize: train split is empty")
    train = _stack(split.train)
    flat = train.reshape(-1, train.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    div = _divisor(std)

    def apply(part):
        return [replace(ex, window=replace(ex.window, values=(ex.window.values - mean) / div))
                for ex in part]

    return replace(split, train=apply(split.train), validation=apply(split.validation),
                   test=apply(split.test), normalization_stats=(mean, std))


def denormalize_values(values: np.ndarray, stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, std = stats
    return values * _divisor(std) + mean


def balance_and_split(examples: Sequence[LabeledExample], ratios=DEFAULT_RATIOS,
                      seed: int = 0) -> DatasetSplit:
    """Down-sample the majority class, then split each class by ``ratios``.

    Validation and test take ``floor(n * ratio)`` of each class and train
    takes the remainder, so every split is balanced.  Fully determined by
    ``seed``.
    """
    ratios = tuple(int(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ConfigError(f"invalid split ratios {ratios}")
    pos = [ex for ex in examples if ex.label == POSITIVE]
    neg = [ex for ex in examples if ex.label == NEGATIVE]
    if not pos or not neg:
        raise DataError(f"need both classes to balance (positive={len(pos)}, negative={len(neg)})")
    rng = np.random.default_rng(seed)
    n = min(len(pos), len(neg))
    total = sum(ratios)
    n_val = math.floor(n * ratios[1] / total)
    n_test = math.floor(n * ratios[2] / total)
    parts = {"train": [], "validation": [], "test": []}
    for cls in (pos, neg):
        keep = np.sort(rng.choice(len(cls), size=n, replace=False))
        order = keep[rng.permutation(n)]
        chosen = [cls[i] for i in order]
        parts["validation"] += chosen[:n_val]
        parts["test"] += chosen[n_val:n_val + n_test]
        parts["train"] += chosen[n_val + n_test:]
    for name in ("train", "validation", "test"):
        part = parts[name]
        parts[name] = [part[i] for i in rng.permutation(len(part))]
    return DatasetSplit(parts["train"], parts["validation"], parts["test"],
                        seed=seed, ratios=ratios)


def preprocess(stays: Sequence[StayRecord], lead_minutes: int, window_hours: float = 6,
               ratios=DEFAULT_RATIOS, seed: int = 0, exclusion_threshold: float = 0.85,
               map_channel: str = "MAP") -> DatasetSplit:
    """Full preparation: exclusion, extraction, balance/split, imputation, normalization."""
    kept = channel_exclusion(stays, exclusion_threshold)
    if map_channel not in kept:
        raise ConfigError(f"channel {map_channel!r} was excluded or is absent; cannot label AHE")
    examples = []
    for stay in stays:
        examples += extract_examples(stay.select_channels(kept), lead_minutes, window_hours, map_channel)
    split = balance_and_split(examples, ratios, seed)
    split = impute_split(split)
    split = normalize(split)
    return replace(split, channels=tuple(kept), lead_minutes=lead_minutes)
