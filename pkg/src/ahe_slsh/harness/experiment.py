"""End-to-end experiment driver.

For each lead time: generate or load stays, preprocess, train every
configured auto-encoder on the train split, encode all splits, build an
SLSH index over the train contexts, classify validation and test, and run
the hand-crafted baselines through the same index settings.
"""

from __future__ import annotations

import contextlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ahe_slsh.errors import AheError, ConfigError
from ahe_slsh.harness.evaluation import (
    BASELINE_MODES,
    classify,
    metrics,
    split_baseline_features,
)
from ahe_slsh.harness.synth import SynthSpec, load_config_file, synth_generate
from ahe_slsh.seqae import ModelConfig, Schedule, encode_batch, train
from ahe_slsh.signal_core import MINUTES_PER_SAMPLE, DatasetSplit, load_csv, preprocess
from ahe_slsh.slsh import SlshParams, build

log = logging.getLogger(__name__)


@dataclass
class ModelSpec:
    architecture: str = "BSS"
    hidden: int = 64
    section_len: int = 0
    layers: int = 1
    name: str = ""

    def label(self) -> str:
        if self.name:
            return self.name
        if self.architecture in ("HSS", "BHSS"):
            return f"{self.architecture}[{self.section_len}]"
        if self.layers > 1:
            return f"{self.architecture}[{self.layers} layers]"
        return self.architecture

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.architecture, self.hidden, self.section_len, self.layers)


def _build(cls, d: dict, what: str):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} field(s): {sorted(unknown)}")
    return cls(**d)


@dataclass
class ExperimentConfig:
    models: list[ModelSpec] = field(default_factory=lambda: [ModelSpec()])
    schedule: Schedule = field(default_factory=Schedule)
    slsh: SlshParams = field(default_factory=SlshParams)
    lead_minutes: list[int] = field(default_factory=lambda: [30, 60, 120])
    baselines: list[str] = field(default_factory=lambda: ["avg_map", "avg_all_vitals"])
    seed: int = 0
    # exactly one of csv / synth
    csv: str | None = None
    synth: SynthSpec | None = None
    window_hours: float = 6
    ratios: tuple[int, int, int] = (81, 9, 10)
    exclusion_threshold: float = 0.85
    map_channel: str = "MAP"
    select_on_val: bool = False
    checkpoint_every: int = 10
    export_contexts: bool = True

    def __post_init__(self):
        for lead in self.lead_minutes:
            if lead % MINUTES_PER_SAMPLE or lead < 0:
                raise ConfigError(f"lead time {lead} min is not a nonnegative multiple of 5")
        if isinstance(self.baselines, str):
            self.baselines = [] if self.baselines == "none" else [self.baselines]
        for b in self.baselines:
            if b not in BASELINE_MODES:
                raise ConfigError(f"unknown baseline {b!r}; choose from none, {', '.join(BASELINE_MODES)}")
        if (self.csv is None) == (self.synth is None):
            raise ConfigError("configure exactly one data source: 'csv' or 'synth'")
        if not self.models and not self.baselines:
            raise ConfigError("nothing to evaluate: no models and no baselines")
        self.ratios = tuple(self.ratios)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment field(s): {sorted(unknown)}")
        if "models" in d:
            d["models"] = [_build(ModelSpec, m, "model") for m in d["models"]]
        if "schedule" in d:
            d["schedule"] = _build(Schedule, d["schedule"], "schedule")
        if "slsh" in d:
            d["slsh"] = _build(SlshParams, d["slsh"], "slsh")
        if d.get("synth") is not None:
            d["synth"] = SynthSpec.from_dict(d["synth"])
        if d.get("csv") is not None and base_dir is not None and not Path(d["csv"]).is_absolute():
            d["csv"] = str(base_dir / d["csv"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(load_config_file(path), base_dir=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        return d


@dataclass
class Report:
    config: dict
    results: list[dict] = field(default_factory=list)
    arms: list[dict] = field(default_factory=list)
    contexts: dict | None = None
    seeds: dict = field(default_factory=dict)
    # wall-clock seconds; the only nondeterministic part of a report
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(**d)

    def deterministic_dict(self) -> dict:
        d = self.to_dict()
        d.pop("timings")
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Report":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{path}: not a report file ({exc})") from None


@contextlib.contextmanager
def stage(name: str, timings: dict | None = None, key: str | None = None):
    """Tag errors raised inside with the pipeline stage, and time the block."""
    t0 = time.perf_counter()
    try:
        yield
    except AheError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    finally:
        if timings is not None:
            timings[key or name] = timings.get(key or name, 0.0) + time.perf_counter() - t0


def _arrays(split: DatasetSplit):
    out = {}
    for name, part in split.parts().items():
        X = np.stack([ex.window.values for ex in part]) if part else None
        y = np.array([ex.label for ex in part], dtype=int)
        out[name] = (X, y)
    return out


def _evaluate_vectors(vectors: dict[str, np.ndarray], labels: dict[str, np.ndarray],
                      params: SlshParams, seed: int) -> dict[str, dict]:
    index = build(vectors["train"], params, seed=seed)
    train_labels = {i: int(v) for i, v in enumerate(labels["train"])}
    out = {}
    for part in ("validation", "test"):
        if len(labels.get(part, ())) == 0:
            continue
        truth = {i: int(v) for i, v in enumerate(labels[part])}
        res = classify(index, train_labels, dict(enumerate(vectors[part])), truth)
        acc, mcc = metrics(res.counts)
        out[part] = {"accuracy": acc, "mcc": mcc, "tp": res.counts.tp, "tn": res.counts.tn,
                     "fp": res.counts.fp, "fn": res.counts.fn,
                     "fallback_rate": res.fallback_rate, "mean_candidates": res.mean_candidates}
    return out


def _val_accuracy(model, arrays, params, seed) -> float:
    vecs = {p: encode_batch(model, arrays[p][0]) for p in ("train", "validation")}
    labs = {p: arrays[p][1] for p in ("train", "validation")}
    return _evaluate_vectors(vecs, labs, params, seed)["validation"]["accuracy"]


def load_stays(config: ExperimentConfig):
    if config.csv is not None:
        return load_csv(config.csv)
    return synth_generate(config.synth)


def run_experiment(config: ExperimentConfig) -> Report:
    """Run every (model, lead time) arm plus baselines; deterministic given the config."""
    timings: dict[str, float] = {}
    seeds = {"split": config.seed, "model": config.seed, "index": config.seed,
             "synth": config.synth.seed if config.synth is not None else None}
    report = Report(config=config.to_dict(), seeds=seeds, timings=timings)
    with stage("ingest", timings):
        stays = load_stays(config)

    for lead in config.lead_minutes:
        with stage(f"preprocess lead={lead}", timings, f"preprocess/{lead}"):
            split = preprocess(stays, lead, config.window_hours, config.ratios, config.seed,
                               config.exclusion_threshold, config.map_channel)
        arrays = _arrays(split)
        labels = {p: arrays[p][1] for p in arrays}
        if arrays["train"][0] is None:
            raise ConfigError(f"[preprocess lead={lead}] train split is empty")
        T, C = split.window_shape
        report.arms.append({"lead_minutes": lead, "channels": list(split.channels),
                            "n_train": len(split.train), "n_validation": len(split.validation),
                            "n_test": len(split.test), "T": T, "C": C})

        for mi, spec in enumerate(config.models):
            name = spec.label()
            key = f"{name}/{lead}"
            sched = Schedule(config.schedule.epochs, config.schedule.lr,
                             config.schedule.batch_size, config.seed + mi)
            best = {"acc": -1.0, "model": None, "epoch": 0}

            def checkpoint(epoch, model, loss, best=best, arrays=arrays):
                if epoch % config.checkpoint_every == 0 or epoch == sched.epochs:
                    acc = _val_accuracy(model, arrays, config.slsh, config.seed)
                    if acc > best["acc"]:
                        best.update(acc=acc, model=model, epoch=epoch)

            with stage(f"train {key}", timings, f"train/{key}"):
                model, history = train(spec.model_config(), arrays["train"][0], sched,
                                       on_epoch=checkpoint if config.select_on_val else None)
                if config.select_on_val and best["model"] is not None:
                    model = best["model"]
            with stage(f"encode {key}", timings, f"encode/{key}"):
                vectors = {p: encode_batch(model, arrays[p][0]) if arrays[p][0] is not None
                           else np.empty((0, model.context_dim)) for p in arrays}
            with stage(f"evaluate {key}", timings, f"evaluate/{key}"):
                scores = _evaluate_vectors(vectors, labels, config.slsh, config.seed)
            for part, row in scores.items():
                report.results.append({"model": name, "kind": "autoencoder", "lead_minutes": lead,
                                       "split": part, **row})
            report.arms[-1].setdefault("models", {})[name] = {
                "model_id": model.model_id, "context_dim": model.context_dim,
                "loss_history": history, "selected_epoch": best["epoch"] if config.select_on_val else None,
            }
            if config.export_contexts and report.contexts is None:
                report.contexts = {"model": name, "lead_minutes": lead, "split": "test",
                                   "labels": labels["test"].tolist(),
                                   "vectors": vectors["test"].tolist()}

        for mode in config.baselines:
            key = f"{mode}/{lead}"
            with stage(f"baseline {key}", timings, f"baseline/{key}"):
                feats = split_baseline_features(split, mode, config.map_channel)
                scores = _evaluate_vectors(feats, labels, config.slsh, config.seed)
            for part, row in scores.items():
                report.results.append({"model": mode, "kind": "baseline", "lead_minutes": lead,
                                       "split": part, **row})
        log.info("lead %d done", lead)
    return report
