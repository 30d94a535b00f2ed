"""Seeded generator of ICU-like stays with planted hypotensive episodes.

Channels are affine read-outs of a few latent AR(1) processes plus a
per-stay baseline (the coupling matrix holds the loadings).  Episode-bearing
stays get one MAP run at or below 60 mmHg, preceded by a precursor drift
whose amplitude decays exponentially with distance to the episode onset, so
windows sampled closer to the episode carry a stronger signal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ahe_slsh.errors import ConfigError
from ahe_slsh.signal_core import AHE_MIN_SAMPLES, MINUTES_PER_SAMPLE, StayRecord

# name, mean, scale, loadings on (pressure, cardio-respiratory, metabolic),
# noise, precursor direction
_DEFAULT_CHANNELS = [
    ("MAP", 80.0, 5.0, (1.0, 0.0, 0.0), 0.25, -1.0),
    ("SBP", 120.0, 9.0, (0.9, 0.2, 0.0), 0.3, -1.0),
    ("DBP", 65.0, 5.0, (0.9, -0.2, 0.0), 0.3, -1.0),
    ("HR", 85.0, 10.0, (-0.3, 0.9, 0.0), 0.3, 1.0),
    ("RR", 18.0, 3.5, (0.0, 0.8, 0.3), 0.4, 1.0),
    ("SpO2", 96.0, 1.5, (0.2, -0.6, 0.0), 0.4, -1.0),
    ("Temp", 37.0, 0.4, (0.0, 0.2, 0.9), 0.2, 0.0),
    ("CVP", 10.0, 3.0, (0.5, 0.3, 0.0), 0.4, -1.0),
    ("PAS", 30.0, 5.0, (0.6, 0.4, 0.0), 0.3, 0.0),
    ("PAD", 14.0, 3.0, (0.6, 0.3, 0.0), 0.3, 0.0),
    ("PAM", 20.0, 4.0, (0.6, 0.3, 0.0), 0.3, 0.0),
    ("ST1", 0.0, 0.5, (0.0, 0.5, 0.3), 0.5, 1.0),
    ("ST2", 0.0, 0.5, (0.0, 0.5, 0.3), 0.5, 0.0),
    ("ST3", 0.0, 0.5, (0.0, 0.4, 0.4), 0.5, 0.0),
    ("EtCO2", 38.0, 4.0, (0.0, -0.4, 0.6), 0.4, 0.0),
    ("ICP", 12.0, 4.0, (0.3, 0.0, 0.4), 0.4, 0.0),
]
_DEFAULT_MISSING = [0.02, 0.02, 0.02, 0.01, 0.05, 0.03, 0.55, 0.6, 0.65, 0.65, 0.65,
                    0.5, 0.55, 0.6, 0.9, 0.92]


@dataclass
class SynthSpec:
    n_stays: int = 400
    stay_length: int = 132
    channels: list[str] = field(default_factory=lambda: [c[0] for c in _DEFAULT_CHANNELS])
    channel_means: list[float] = field(default_factory=lambda: [c[1] for c in _DEFAULT_CHANNELS])
    channel_scales: list[float] = field(default_factory=lambda: [c[2] for c in _DEFAULT_CHANNELS])
    # (C, K) loadings of each channel on the latent processes
    coupling: list[list[float]] = field(default_factory=lambda: [list(c[3]) for c in _DEFAULT_CHANNELS])
    noise: list[float] = field(default_factory=lambda: [c[4] for c in _DEFAULT_CHANNELS])
    ar_coefficients: list[float] = field(default_factory=lambda: [0.97, 0.95, 0.99])
    baseline_std: float = 1.0
    episode_fraction: float = 0.7
    episode_min_samples: int = AHE_MIN_SAMPLES
    episode_max_samples: int = 12
    # earliest onset index; leaves room for a 6 h window plus a 2 h lead
    earliest_onset: int = 96
    precursor_strength: float = 2.5
    map_precursor_strength: float = 0.6
    precursor_direction: list[float] = field(default_factory=lambda: [c[5] for c in _DEFAULT_CHANNELS])
    decay_minutes: float = 60.0
    missing_rates: list[float] = field(default_factory=lambda: list(_DEFAULT_MISSING))
    map_channel: str = "MAP"
    seed: int = 0

    def __post_init__(self):
        C = len(self.channels)
        for name in ("channel_means", "channel_scales", "noise", "precursor_direction",
                     "missing_rates", "coupling"):
            if len(getattr(self, name)) != C:
                raise ConfigError(f"SynthSpec.{name} needs one entry per channel ({C})")
        K = len(self.ar_coefficients)
        if any(len(row) != K for row in self.coupling):
            raise ConfigError(f"every coupling row needs {K} loadings (one per AR process)")
        if any(not 0.0 <= r < 1.0 for r in self.missing_rates):
            raise ConfigError("missingness rates must lie in [0, 1)")
        if any(not -1.0 < a < 1.0 for a in self.ar_coefficients):
            raise ConfigError("AR(1) coefficients must lie in (-1, 1)")
        if self.decay_minutes <= 0:
            raise ConfigError("decay horizon must be positive")
        if self.map_channel not in self.channels:
            raise ConfigError(f"map channel {self.map_channel!r} not among channels")
        if not self.episode_min_samples <= self.episode_max_samples:
            raise ConfigError("episode_min_samples must not exceed episode_max_samples")
        if self.episode_min_samples < AHE_MIN_SAMPLES:
            raise ConfigError(f"planted episodes need at least {AHE_MIN_SAMPLES} samples")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown SynthSpec field(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        return cls.from_dict(load_config_file(path))

    def to_dict(self) -> dict:
        return asdict(self)


def load_config_file(path) -> dict:
    """Read a JSON or TOML mapping, chosen by file extension."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def synth_generate(spec: SynthSpec, return_onsets: bool = False):
    """Generate ``spec.n_stays`` stays; identical specs give identical output.

    With ``return_onsets`` also returns the planted onset index per stay
    (-1 for stays without an episode).
    """
    T = spec.stay_length
    last_onset = T - spec.episode_max_samples
    if spec.episode_fraction > 0 and last_onset < spec.earliest_onset:
        raise ConfigError(f"stay_length={T} leaves no room for an episode after sample "
                          f"{spec.earliest_onset}")
    rng = np.random.default_rng(spec.seed)
    C = len(spec.channels)
    K = len(spec.ar_coefficients)
    phi = np.asarray(spec.ar_coefficients)
    load = np.asarray(spec.coupling, dtype=np.float64)
    means = np.asarray(spec.channel_means)
    scales = np.asarray(spec.channel_scales)
    noise = np.asarray(spec.noise)
    direction = np.asarray(spec.precursor_direction, dtype=np.float64)
    m = spec.channels.index(spec.map_channel)
    strength = spec.precursor_strength * direction
    strength[m] = -abs(spec.map_precursor_strength)
    miss = np.asarray(spec.missing_rates)
    innov = np.sqrt(1.0 - phi ** 2)

    stays = []
    onsets = []
    for s in range(spec.n_stays):
        latent = np.empty((T, K))
        z = rng.standard_normal(K)
        for t in range(T):
            z = phi * z + innov * rng.standard_normal(K)
            latent[t] = z
        base = spec.baseline_std * rng.standard_normal(K)
        x = (latent + base) @ load.T + noise * rng.standard_normal((T, C))
        has_episode = rng.random() < spec.episode_fraction
        onset = -1
        if has_episode:
            onset = int(rng.integers(spec.earliest_onset, last_onset + 1))
            dur = int(rng.integers(spec.episode_min_samples, spec.episode_max_samples + 1))
            t_idx = np.arange(T)
            # minutes to onset before the episode, minutes since its end after it
            dist = np.maximum(onset - t_idx, 0) + np.maximum(t_idx - (onset + dur - 1), 0)
            weight = np.exp(-dist * MINUTES_PER_SAMPLE / spec.decay_minutes)
            x += weight[:, None] * strength[None, :]
        values = means + scales * x
        if has_episode:
            ep = slice(onset, onset + dur)
            values[ep, m] = np.minimum(values[ep, m], 52.0 + 2.0 * rng.standard_normal(dur))
            values[ep, m] = np.minimum(values[ep, m], 59.5)
        mask = rng.random((T, C)) >= miss
        if has_episode:
            mask[onset:onset + dur, m] = True
        samples = np.where(mask, values, np.nan)
        stays.append(StayRecord(f"s{s:05d}", tuple(spec.channels), samples, mask))
        onsets.append(onset)
    return (stays, onsets) if return_onsets else stays
