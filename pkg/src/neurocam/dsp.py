"""Band-pass filtering, epoching, normalisation and Morlet time-frequency power."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from neurocam.edf import Recording, Trial

log = logging.getLogger(__name__)

CLASSES = ("Left", "Right")


@dataclass
class FilterSpec:
    low_cut: float
    high_cut: float
    order: int
    sampling_rate: float
    b: np.ndarray
    a: np.ndarray
    sos: np.ndarray = field(repr=False, default=None)

    def response(self, freqs) -> np.ndarray:
        """Complex frequency response H(e^{jw}) evaluated directly from b and a."""
        z = np.exp(-2j * np.pi * np.asarray(freqs, dtype=float) / self.sampling_rate)
        return np.polyval(self.b[::-1], z) / np.polyval(self.a[::-1], z)


def design_bandpass(low: float, high: float, fs: float, order: int = 4) -> FilterSpec:
    """Butterworth band-pass of the given order (scipy design, stability checked)."""
    if not 0 < low < high < fs / 2:
        raise ValueError(f"band edges must satisfy 0 < low < high < fs/2, got ({low}, {high}, fs={fs})")
    if order < 1:
        raise ValueError("order must be >= 1")
    b, a = signal.butter(order, [low, high], btype="bandpass", fs=fs)
    sos = signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    radius = np.abs(np.roots(a)).max()
    if radius >= 1.0:
        raise ValueError(f"unstable filter design: pole radius {radius:.6f}")
    return FilterSpec(low, high, order, fs, b, a, sos)


def filter_zero_phase(spec: FilterSpec, x) -> np.ndarray:
    """Forward-backward filtering with odd reflection padding of 3*order samples.

    Works along the last axis, so a (channels, samples) matrix is filtered row-wise.
    """
    x = np.asarray(x, dtype=np.float64)
    padlen = 3 * spec.order
    if x.shape[-1] <= padlen:
        raise ValueError(f"signal of {x.shape[-1]} samples too short for {padlen}-sample edge padding")
    return signal.sosfiltfilt(spec.sos, x, axis=-1, padtype="odd", padlen=padlen)


def filter_recording(recording: Recording, spec: FilterSpec) -> Recording:
    if not np.isclose(recording.sampling_rate, spec.sampling_rate):
        raise ValueError("filter designed for a different sampling rate")
    return replace(recording, samples=filter_zero_phase(spec, recording.samples))


# --------------------------------------------------------------------------
# epochs


@dataclass
class EpochSet:
    """Labelled fixed-length windows.

    ``labels`` holds class indices into ``CLASSES`` (0 = Left, 1 = Right);
    ``provenance`` rows are (subject, run, trial index, window index).
    """

    data: np.ndarray
    labels: np.ndarray
    channel_labels: list[str]
    sampling_rate: float
    provenance: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.provenance = np.asarray(self.provenance, dtype=np.int64).reshape(-1, 4)
        if self.data.ndim != 3:
            raise ValueError(f"epoch data must be (n_epochs, n_channels, n_times), got {self.data.shape}")
        if len(self.labels) != len(self.data) or len(self.provenance) != len(self.data):
            raise ValueError("labels/provenance length does not match number of epochs")
        if self.data.shape[1] != len(self.channel_labels):
            raise ValueError("channel label count does not match data")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("epoch data contains NaN or infinite values")

    def __len__(self):
        return len(self.labels)

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_times(self) -> int:
        return self.data.shape[2]

    @property
    def label_names(self) -> list[str]:
        return [CLASSES[i] for i in self.labels]

    def take(self, idx) -> "EpochSet":
        idx = np.asarray(idx, dtype=np.int64)
        return EpochSet(self.data[idx], self.labels[idx], list(self.channel_labels), self.sampling_rate, self.provenance[idx])

    def trial_keys(self) -> np.ndarray:
        """One integer key per epoch identifying its source trial."""
        _, keys = np.unique(self.provenance[:, :3], axis=0, return_inverse=True)
        return keys.ravel()

    @staticmethod
    def concatenate(sets: Sequence["EpochSet"]) -> "EpochSet":
        first = sets[0]
        for s in sets[1:]:
            if s.channel_labels != first.channel_labels:
                raise ValueError("cannot concatenate epoch sets with different channels")
        return EpochSet(
            np.concatenate([s.data for s in sets]),
            np.concatenate([s.labels for s in sets]),
            list(first.channel_labels),
            first.sampling_rate,
            np.concatenate([s.provenance for s in sets]),
        )

    def save(self, path) -> None:
        path = Path(path)
        write_array(path.with_suffix(".bin"), self.data)
        path.with_suffix(".json").write_text(
            json.dumps(
                {
                    "labels": [CLASSES[i] for i in self.labels],
                    "channel_labels": self.channel_labels,
                    "sampling_rate": self.sampling_rate,
                    "provenance": self.provenance.tolist(),
                    "provenance_fields": ["subject", "run", "trial", "window"],
                },
                indent=1,
            )
        )

    @classmethod
    def load(cls, path) -> "EpochSet":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        data = read_array(path.with_suffix(".bin"))
        labels = [CLASSES.index(x) for x in meta["labels"]]
        return cls(data, labels, meta["channel_labels"], meta["sampling_rate"], meta["provenance"])


_MAGIC = b"NCARR1\x00\x00"


def write_array(path, arr) -> None:
    """Binary container: magic, uint32 ndim, uint64 dims, little-endian float64 payload."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = _MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not an array container")
    (ndim,) = struct.unpack_from("<I", raw, 8)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 12)
    offset = 12 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8", offset=offset).reshape(shape).astype(np.float64)


def epoch_windows(trial: Trial, filtered: Recording, window_seconds: float = 1.0) -> list[np.ndarray]:
    """Cut a trial into consecutive non-overlapping windows (channels x samples each)."""
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    fs = filtered.sampling_rate
    n_win = int(round(window_seconds * fs))
    n = int(np.floor(trial.length_samples / fs / window_seconds + 1e-9))
    start = trial.onset_sample
    end = start + trial.length_samples
    if start < 0 or end > filtered.n_samples:
        raise ValueError("trial lies outside the recording")
    out = []
    for w in range(n):
        a = start + w * n_win
        if a + n_win > end:
            break
        out.append(filtered.samples[:, a : a + n_win].copy())
    return out


def epochs_from_recording(
    filtered: Recording, trials: Sequence[Trial], window_seconds: float = 1.0
) -> EpochSet:
    data, labels, prov = [], [], []
    n_win = int(round(window_seconds * filtered.sampling_rate))
    for t in trials:
        for w, win in enumerate(epoch_windows(t, filtered, window_seconds)):
            data.append(win)
            labels.append(CLASSES.index(t.class_label))
            prov.append((filtered.subject_id, filtered.run_id, t.index, w))
    arr = np.stack(data) if data else np.zeros((0, filtered.n_channels, n_win))
    return EpochSet(arr, labels, list(filtered.channel_labels), filtered.sampling_rate, prov)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    flat: np.ndarray


def zscore_normalize(epochs: EpochSet, stats: NormStats | None = None) -> tuple[EpochSet, NormStats]:
    """Per-channel z-scoring.

    With ``stats=None`` the statistics are computed over all epochs and times
    of ``epochs`` and returned; otherwise the given (training-set) statistics
    are applied unchanged. Zero-variance channels divide by 1 and are flagged.
    """
    if stats is None:
        mean = epochs.data.mean(axis=(0, 2))
        std = epochs.data.std(axis=(0, 2))
        flat = std < 1e-12
        stats = NormStats(mean, np.where(flat, 1.0, std), flat)
        if flat.any():
            log.warning("flat channels: %s", [epochs.channel_labels[i] for i in np.where(flat)[0]])
    elif len(stats.mean) != epochs.n_channels:
        raise ValueError("normalisation stats do not match channel count")
    data = (epochs.data - stats.mean[None, :, None]) / stats.std[None, :, None]
    return replace(epochs, data=data), stats


# --------------------------------------------------------------------------
# time-frequency


@dataclass
class TFR:
    freqs: np.ndarray
    times: np.ndarray
    power: np.ndarray
    channel: str = ""


def morlet_wavelet(freq: float, fs: float, n_cycles: float) -> np.ndarray:
    """Complex Morlet wavelet spanning +-3.5 standard deviations, unit L2 norm."""
    sigma_t = n_cycles / (2 * np.pi * freq)
    t = np.arange(-3.5 * sigma_t, 3.5 * sigma_t + 0.5 / fs, 1.0 / fs)
    w = np.exp(2j * np.pi * freq * t) * np.exp(-(t**2) / (2 * sigma_t**2))
    return w / np.linalg.norm(w)


def morlet_tfr(x, fs: float, freqs=None, n_cycles=None, channel: str = "") -> TFR:
    """Power |x * psi_f|^2 for each frequency, same length as ``x``.

    Defaults: 8-30 Hz in 1 Hz steps with ``n_cycles = f / 2``. Frequencies
    whose wavelet is longer than the signal are dropped with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    freqs = np.arange(8.0, 31.0) if freqs is None else np.asarray(freqs, dtype=float)
    if n_cycles is None:
        n_cycles = freqs / 2.0
    n_cycles = np.broadcast_to(np.asarray(n_cycles, dtype=float), freqs.shape)
    if np.any(freqs <= 0) or np.any(freqs >= fs / 2):
        raise ValueError("every frequency must satisfy 0 < f < fs/2")
    if np.any(n_cycles <= 0):
        raise ValueError("n_cycles must be positive")
    kept, rows = [], []
    for f, nc in zip(freqs, n_cycles):
        w = morlet_wavelet(f, fs, nc)
        if len(w) > len(x):
            log.warning("skipping %.2f Hz: wavelet (%d samples) longer than signal (%d)", f, len(w), len(x))
            continue
        conv = signal.fftconvolve(x, w, mode="same")
        rows.append(np.abs(conv) ** 2)
        kept.append(f)
    power = np.array(rows) if rows else np.zeros((0, len(x)))
    return TFR(np.array(kept), np.arange(len(x)) / fs, power, channel)
