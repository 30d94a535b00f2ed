"""Vital-sign ingestion and example preparation.

Raw stays go through AHE detection, lead-time-offset window extraction,
class balancing and an 81:9:10 split, imputation and per-channel feature
normalization.  All samples are on a 5-minute grid.
"""

from ahe_slsh.signal_core.core import (
    AHE_MIN_SAMPLES,
    AHE_THRESHOLD_MMHG,
    MINUTES_PER_SAMPLE,
    NEGATIVE,
    POSITIVE,
    DatasetSplit,
    LabeledExample,
    StayRecord,
    VitalWindow,
    balance_and_split,
    channel_exclusion,
    compute_population_means,
    denormalize_values,
    detect_ahe,
    extract_examples,
    impute,
    impute_split,
    normalize,
    preprocess,
)
from ahe_slsh.signal_core.io import load_csv, load_dataset, save_dataset, write_csv

__all__ = [
    "AHE_MIN_SAMPLES",
    "AHE_THRESHOLD_MMHG",
    "MINUTES_PER_SAMPLE",
    "NEGATIVE",
    "POSITIVE",
    "DatasetSplit",
    "LabeledExample",
    "StayRecord",
    "VitalWindow",
    "balance_and_split",
    "channel_exclusion",
    "compute_population_means",
    "denormalize_values",
    "detect_ahe",
    "extract_examples",
    "impute",
    "impute_split",
    "load_csv",
    "load_dataset",
    "normalize",
    "preprocess",
    "save_dataset",
    "write_csv",
]
