"""Montage geometry and channel subsets: Grad-CAM top-k unions, motor-strip channels, restriction."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from neurocam.dsp import EpochSet
from neurocam.gradcam import ChannelRanking

MI_CHANNELS = (
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6",
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
)
ORIGINS = ("gradcam_union", "domain_mi21", "manual")


def normalize_label(label: str) -> str:
    """Dataset spelling to 10-10 spelling: 'Fc5.' -> 'FC5', 'Cz..' -> 'Cz', 'Fpz.' -> 'Fpz'."""
    s = label.strip().strip(".").upper().replace("FP", "Fp")
    if s.endswith("Z") and len(s) > 1:
        s = s[:-1] + "z"
    return s


@dataclass
class MontageLayout:
    name: str
    entries: dict[str, np.ndarray]

    def __post_init__(self):
        for lab, v in self.entries.items():
            v = np.asarray(v, dtype=np.float64)
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValueError(f"{lab}: position is not on the unit sphere")
            self.entries[lab] = v

    @property
    def labels(self) -> list[str]:
        return list(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, label):
        return label in self.entries

    @property
    def projection(self) -> dict[str, np.ndarray]:
        """Azimuthal equidistant projection about the vertex; 90 degrees from it maps to radius 1."""
        out = {}
        for lab, (x, y, z) in self.entries.items():
            theta = np.arccos(np.clip(z, -1.0, 1.0))
            rho = np.hypot(x, y)
            r = theta / (np.pi / 2)
            out[lab] = np.array([0.0, 0.0]) if rho < 1e-12 else np.array([x, y]) / rho * r
        return out

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "x", "y", "z"])
        for lab, v in self.entries.items():
            w.writerow([lab] + [f"{c:.9f}" for c in v])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, name: str = "custom") -> "MontageLayout":
        entries = {}
        for row in csv.DictReader(io.StringIO(text)):
            entries[normalize_label(row["label"])] = np.array([float(row[k]) for k in "xyz"])
        return cls(name, entries)


def load_montage() -> MontageLayout:
    """The dataset's 64 electrodes, in recording order, on an idealized unit sphere."""
    text = resources.files("neurocam.data").joinpath("montage64.csv").read_text()
    return MontageLayout.from_csv(text, name="eegmmidb-64")


@dataclass
class ChannelSubset:
    labels: list[str]
    origin: str = "manual"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = list(self.labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("subset labels must be distinct")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")

    def __len__(self):
        return len(self.labels)

    def to_json(self) -> str:
        return json.dumps({"labels": self.labels, "origin": self.origin, "provenance": self.provenance}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ChannelSubset":
        d = json.loads(text)
        return cls(d["labels"], d.get("origin", "manual"), d.get("provenance", {}))


def top_k_union(left: ChannelRanking, right: ChannelRanking, k: int = 10) -> ChannelSubset:
    """Union of both classes' top-k channels, ordered by descending max score.

    Scores are compared on each ranking's own scale; ties keep the left
    ranking's order followed by the right one's.
    """
    if set(left.scores) != set(right.scores):
        raise ValueError("rankings cover different channel sets")
    if not 1 <= k <= len(left.order):
        raise ValueError(f"k must lie in [1, {len(left.order)}]")
    chosen = list(dict.fromkeys(left.order[:k] + right.order[:k]))
    first_seen = {ch: i for i, ch in enumerate(chosen)}

    def best(ch):
        s = [r.scores[ch] for r in (left, right) if ch in r.order[:k]]
        return max(s)

    chosen.sort(key=lambda ch: (-best(ch), first_seen[ch]))
    common = sorted(set(left.order[:k]) & set(right.order[:k]), key=first_seen.get)
    return ChannelSubset(
        chosen,
        "gradcam_union",
        {"k": k, "left_top": left.order[:k], "right_top": right.order[:k], "common": common},
    )


def mi_channels(montage: MontageLayout | Sequence[str], labels: Sequence[str] = MI_CHANNELS) -> ChannelSubset:
    """The 21 frontal-central / central / centro-parietal motor-strip channels."""
    have = set(montage.labels if isinstance(montage, MontageLayout) else montage)
    for lab in labels:
        if lab not in have:
            raise ValueError(f"montage lacks channel {lab}")
    return ChannelSubset(list(labels), "domain_mi21", {"rule": "FC5-FC6, C5-C6, CP5-CP6 rows"})


def subset_epochs(epochs: EpochSet, subset: ChannelSubset | Sequence[str]) -> EpochSet:
    labels = list(subset.labels if isinstance(subset, ChannelSubset) else subset)
    if not labels:
        raise ValueError("empty channel subset")
    pos = {lab: i for i, lab in enumerate(epochs.channel_labels)}
    unknown = [lab for lab in labels if lab not in pos]
    if unknown:
        raise ValueError(f"unknown channel label(s): {unknown}")
    idx = [pos[lab] for lab in labels]
    return EpochSet(epochs.data[:, idx, :], epochs.labels.copy(), labels, epochs.sampling_rate, epochs.provenance.copy())


def complement(montage_labels: Sequence[str], exclude: Sequence[str], n: int | None = None, prefer=None) -> list[str]:
    """Channels not in ``exclude``; with ``n`` the first n in ``prefer`` order (default montage order)."""
    ex = set(exclude)
    pool = [c for c in (prefer or montage_labels) if c not in ex and c in set(montage_labels)]
    if n is not None:
        if n > len(pool):
            raise ValueError(f"only {len(pool)} channels available outside the exclusion set")
        pool = pool[:n]
    return pool


def aggregate_rankings(per_subject: Sequence[ChannelRanking], k: int = 10) -> dict[str, int]:
    """How many subjects have each channel in their top-k."""
    if not per_subject:
        return {}
    labels = list(per_subject[0].order)
    for r in per_subject[1:]:
        if set(r.order) != set(labels):
            raise ValueError("rankings cover different channel sets")
    counts = Counter()
    for r in per_subject:
        counts.update(r.order[:k])
    return {lab: counts.get(lab, 0) for lab in labels}


def far_from(montage: MontageLayout, anchors: Sequence[str]) -> list[str]:
    """Montage labels sorted by decreasing angular distance to the nearest anchor."""
    A = np.array([montage.entries[a] for a in anchors])
    def key(lab):
        return -float(np.min(np.arccos(np.clip(A @ montage.entries[lab], -1, 1))))
    return sorted(montage.labels, key=key)
