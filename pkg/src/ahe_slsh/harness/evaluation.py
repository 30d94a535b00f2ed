from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ahe_slsh.errors import ConfigError, DataError
from ahe_slsh.signal_core import NEGATIVE, POSITIVE, DatasetSplit, LabeledExample
from ahe_slsh.slsh import SlshIndex, query

BASELINE_MODES = ("avg_map", "avg_all_vitals")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ConfigError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, truth: Sequence[int], predicted: Sequence[int]) -> "ConfusionCounts":
        tp = tn = fp = fn = 0
        for t, p in zip(truth, predicted, strict=True):
            if p == POSITIVE:
                tp, fp = (tp + 1, fp) if t == POSITIVE else (tp, fp + 1)
            else:
                tn, fn = (tn + 1, fn) if t == NEGATIVE else (tn, fn + 1)
        return cls(tp, tn, fp, fn)


def metrics(counts: ConfusionCounts) -> tuple[float, float]:
    """Accuracy and Matthews correlation coefficient.

    MCC is taken as 0 whenever any marginal in its denominator is zero.
    """
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    total = counts.total
    if total == 0:
        raise DataError("metrics of an empty confusion table")
    accuracy = (tp + tn) / total
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = 0.0 if denom == 0 else (tp * tn - fp * fn) / math.sqrt(denom)
    return accuracy, mcc


def _vote(ids: list[int], labels: Mapping[int, int]) -> int:
    votes = Counter(labels[i] for i in ids)
    best = max(votes.values())
    tied = {lab for lab, n in votes.items() if n == best}
    if len(tied) == 1:
        return tied.pop()
    return labels[min(i for i in ids if labels[i] in tied)]


@dataclass
class Classification:
    predictions: dict[int, int]
    counts: ConfusionCounts
    fallback_rate: float
    mean_candidates: float


def classify(index: SlshIndex, labels: Mapping[int, int], contexts: Mapping[int, np.ndarray],
             truth: Mapping[int, int] | None = None, k: int | None = None) -> Classification:
    """Label each query vector by its nearest indexed neighbour(s).

    ``labels`` maps indexed ids to classes; ``truth`` (if given) maps query
    ids to their true classes for the confusion table.
    """
    missing = [int(i) for i in index.ids if int(i) not in labels]
    if missing:
        raise ConfigError(f"{len(missing)} indexed id(s) have no label, e.g. {missing[0]}")
    k = index.params.k if k is None else k
    predictions = {}
    fallbacks = 0
    n_cand = 0
    for qid, vec in contexts.items():
        res = query(index, vec, k)
        fallbacks += res.fallback
        n_cand += res.candidate_count
        predictions[qid] = labels[res.ids[0]] if k == 1 else _vote(res.ids, labels)
    n = max(len(predictions), 1)
    if truth is not None:
        keys = list(predictions)
        counts = ConfusionCounts.from_labels([truth[q] for q in keys], [predictions[q] for q in keys])
    else:
        counts = ConfusionCounts()
    return Classification(predictions, counts, fallbacks / n, n_cand / n)


def baseline_features(examples: Sequence[LabeledExample], channels: Sequence[str], mode: str,
                      map_channel: str = "MAP") -> np.ndarray:
    """Hand-crafted window features: mean MAP (1-D) or every channel's mean (C-D)."""
    if mode not in BASELINE_MODES:
        raise ConfigError(f"unknown baseline mode {mode!r}; choose from {BASELINE_MODES}")
    channels = list(channels)
    if not examples:
        return np.empty((0, 1 if mode == "avg_map" else len(channels)))
    if mode == "avg_map" and map_channel not in channels:
        raise ConfigError(f"channel {map_channel!r} absent; avg_map baseline needs it")
    means = np.stack([ex.window.values for ex in examples]).mean(axis=1)
    if mode == "avg_map":
        # same reduction as avg_all_vitals, so the two agree on the MAP coordinate exactly
        return means[:, channels.index(map_channel)][:, None]
    return means


def split_baseline_features(split: DatasetSplit, mode: str, map_channel: str = "MAP") -> dict[str, np.ndarray]:
    return {name: baseline_features(part, split.channels, mode, map_channel)
            for name, part in split.parts().items()}
