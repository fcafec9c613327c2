"""Synthetic two-class EEG with planted contralateral mu-band desynchronization."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

from neurocam.channels import load_montage
from neurocam.dsp import CLASSES, EpochSet

SYNTH_SUBJECT = 0


@dataclass
class SynthSpec:
    """Generator settings.

    ``mu_focus`` scales the mu amplitude on the union of planted channels
    relative to the rest of the scalp (1 = spatially uniform rhythm).
    """

    n_trials: int = 200  # per class
    fs: float = 160.0
    n_channels: int = 64
    n_times: int = 160
    mu_freq: float = 11.0
    mu_amplitude: float = 1.0
    mu_focus: float = 1.0
    erd_depth: float = 0.5
    erd_channels_left_class: tuple = ("C4", "CP4")
    erd_channels_right_class: tuple = ("C3", "CP3")
    noise_sigma: float = 1.0
    phase_jitter: float = 0.5  # rad, per-channel spread around the trial's common mu phase
    seed: int = 0
    channel_labels: list = field(default=None, repr=False)

    def __post_init__(self):
        self.erd_channels_left_class = tuple(self.erd_channels_left_class)
        self.erd_channels_right_class = tuple(self.erd_channels_right_class)
        if self.channel_labels is None:
            self.channel_labels = load_montage().labels[: self.n_channels]
        self.channel_labels = list(self.channel_labels)

    def validate(self) -> None:
        if not 0.0 <= self.erd_depth <= 1.0:
            raise ValueError("erd_depth must lie in [0, 1]")
        if len(self.channel_labels) != self.n_channels:
            raise ValueError("channel_labels length must equal n_channels")
        missing = set(self.erd_channels_left_class + self.erd_channels_right_class) - set(self.channel_labels)
        if missing:
            raise ValueError(f"ERD channels not in montage: {sorted(missing)}")
        if self.n_trials < 1 or self.n_times < 2 or not 0 < self.mu_freq < self.fs / 2:
            raise ValueError("need n_trials >= 1, n_times >= 2 and 0 < mu_freq < fs/2")
        if self.mu_focus <= 0:
            raise ValueError("mu_focus must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# resonator bank: damped sinusoids at log-spaced frequencies, gains ~ f^-1/2 (power ~ 1/f)
_BANK_FREQS = np.geomspace(1.0, 60.0, 12)
_BURN = 96


@lru_cache(maxsize=8)
def _resonators(fs: float):
    bank, energy = [], 0.0
    for f in _BANK_FREQS:
        r = np.exp(-np.pi * max(f / 4.0, 1.0) / fs)  # bandwidth ~ f/4 Hz
        w = 2 * np.pi * f / fs
        a = np.array([1.0, -2 * r * np.cos(w), r * r])
        h = signal.lfilter([1.0], a, np.r_[1.0, np.zeros(4095)])
        gain = f**-0.5 / np.sqrt(np.sum(h * h))
        bank.append((a, gain))
        energy += f**-1.0
    return [(a, g / np.sqrt(energy)) for a, g in bank]


def background(rng: np.random.Generator, n_channels: int, n_times: int, fs: float, sigma: float) -> np.ndarray:
    """Pink-ish noise from a bank of randomly driven damped resonators; unit-sigma scaled."""
    out = np.zeros((n_channels, n_times + _BURN))
    for a, g in _resonators(fs):
        out += g * signal.lfilter([1.0], a, rng.standard_normal((n_channels, n_times + _BURN)), axis=1)
    return sigma * out[:, _BURN:]


def mu_amplitudes(spec: SynthSpec, class_index: int) -> np.ndarray:
    planted = set(spec.erd_channels_left_class + spec.erd_channels_right_class)
    amp = np.array([spec.mu_focus if ch in planted else 1.0 for ch in spec.channel_labels]) * spec.mu_amplitude
    erd = spec.erd_channels_left_class if class_index == 0 else spec.erd_channels_right_class
    for ch in erd:
        amp[spec.channel_labels.index(ch)] *= 1.0 - spec.erd_depth
    return amp


def generate(spec: SynthSpec) -> tuple[EpochSet, dict]:
    """Balanced epochs (Left trials first, then Right) plus a ground-truth descriptor.

    Each trial draws from its own counter-based stream, so trial i is the
    same whatever else is generated. The mu rhythm has one random phase per
    trial, spread by ``phase_jitter`` across channels, and a small per-trial
    frequency jitter.
    """
    spec.validate()
    C, n = spec.n_channels, spec.n_times
    t = np.arange(n) / spec.fs
    data = np.empty((2 * spec.n_trials, C, n))
    labels = np.repeat([0, 1], spec.n_trials)
    for i in range(2 * spec.n_trials):
        rng = np.random.Generator(np.random.Philox(key=spec.seed, counter=[0, 0, i, 1]))
        noise = background(rng, C, n, spec.fs, spec.noise_sigma)
        f = spec.mu_freq + 0.5 * rng.standard_normal()
        phase = rng.uniform(0, 2 * np.pi) + spec.phase_jitter * rng.standard_normal(C)
        amp = mu_amplitudes(spec, labels[i])
        data[i] = noise + amp[:, None] * np.cos(2 * np.pi * f * t[None, :] + phase[:, None])
    prov = np.stack([np.full(len(labels), SYNTH_SUBJECT), np.zeros(len(labels), int), np.arange(len(labels)), np.zeros(len(labels), int)], axis=1)
    epochs = EpochSet(data, labels, spec.channel_labels, spec.fs, prov)
    truth = {
        "classes": list(CLASSES),
        "planted": {"Left": list(spec.erd_channels_left_class), "Right": list(spec.erd_channels_right_class)},
        "mu_freq": spec.mu_freq,
        "erd_depth": spec.erd_depth,
        "spec": spec.to_dict(),
    }
    return epochs, truth


def save(epochs: EpochSet, truth: dict, path) -> None:
    path = Path(path)
    epochs.save(path)
    path.with_name(path.stem + "_truth.json").write_text(json.dumps(truth, indent=1))
