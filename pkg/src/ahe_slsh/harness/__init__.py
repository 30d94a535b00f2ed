"""Experiment harness: synthetic data, baselines, classification, metrics, reports, CLI."""

from ahe_slsh.harness.evaluation import (
    BASELINE_MODES,
    Classification,
    ConfusionCounts,
    baseline_features,
    classify,
    metrics,
    split_baseline_features,
)
from ahe_slsh.harness.experiment import ExperimentConfig, ModelSpec, Report, run_experiment
from ahe_slsh.harness.synth import SynthSpec, synth_generate

__all__ = [
    "BASELINE_MODES", "Classification", "ConfusionCounts", "ExperimentConfig", "ModelSpec",
    "Report", "SynthSpec", "baseline_features", "classify", "metrics", "run_experiment",
    "split_baseline_features", "synth_generate",
]
