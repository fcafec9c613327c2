"""Chance levels, participant screening, Wilcoxon signed-rank tests and Table-I aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np
from scipy import stats as sps

from neurocam.training import SubjectMetrics

SCENARIOS = ("all64", "gradcam17", "mi21")
COLUMNS = ("overall", "left", "right")
ALPHA = 0.05


def chance_level(n: int, alpha: float = 0.05, p0: float = 0.5) -> float:
    """Smallest accuracy (percent) a binomial(n, p0) guesser reaches with probability <= alpha.

    Returns ``100 * k / n`` for the least ``k`` with ``P[X >= k] <= alpha``.
    """
    if n < 1 or not 0 < alpha < 1 or not 0 < p0 < 1:
        raise ValueError("need n >= 1, 0 < alpha < 1, 0 < p0 < 1")
    ks = np.arange(n + 1)
    tail = sps.binom.sf(ks - 1, n, p0)  # P[X >= k]
    k_star = int(ks[np.argmax(tail <= alpha)]) if np.any(tail <= alpha) else n
    return 100.0 * k_star / n


def majority_baseline(labels) -> float:
    labels = list(labels)
    if not labels:
        raise ValueError("labels must be non-empty")
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    return 100.0 * counts.max() / len(labels)


def select_participants(metrics: Sequence[SubjectMetrics], margin: float = 10.0) -> list[int]:
    """Subjects whose overall accuracy is at least ``chance + margin`` percentage points."""
    return [m.subject_id for m in metrics if m.overall_acc >= m.chance_level + margin - 1e-9]


# --------------------------------------------------------------------------
# Wilcoxon


@dataclass
class PairedSample:
    a: np.ndarray
    b: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("paired samples must be equal-length 1-D sequences")
        if len(self.a) < 2:
            raise ValueError("need at least 2 pairs")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("paired values must be finite")


@dataclass
class WilcoxonResult:
    w: float
    p_two_sided: float
    n_effective: int
    w_plus: float
    w_minus: float
    method: str
    all_zero: bool = False

    def significant(self, alpha: float = ALPHA) -> bool:
        return self.p_two_sided <= alpha


def signed_ranks(a, b, decimals: int = 9):
    """Nonzero differences a-b and their mid-ranks of |d| (zeros dropped).

    Differences are rounded to ``decimals`` places first so that values like
    70.97-65.59 and 68.82-63.44 tie as they do on paper.
    """
    d = np.round(np.asarray(a, float) - np.asarray(b, float), decimals)
    d = d[d != 0]
    return d, sps.rankdata(np.abs(d), method="average")


def _exact_lower_tail(ranks: np.ndarray, w: float) -> float:
    """P[W+ <= w] over all 2^n sign assignments, by direct enumeration."""
    n = len(ranks)
    total = 1 << n
    count = 0
    chunk = 1 << min(n, 16)
    bits = np.arange(n, dtype=np.int64)
    for start in range(0, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        signs = (masks[:, None] >> bits) & 1
        wplus = signs @ ranks
        count += int(np.count_nonzero(wplus <= w + 1e-9))
    return count / total


def wilcoxon_signed_rank(sample: PairedSample, exact_max_n: int = 20) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test with mid-ranks for ties.

    Exact null by sign-flip enumeration when the number of nonzero
    differences is at most ``exact_max_n``; tie-corrected normal
    approximation with a 0.5 continuity correction otherwise. All-zero differences give p = 1 with
    ``all_zero`` set.
    """
    d, r = signed_ranks(sample.a, sample.b)
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, 0.0, 0.0, "none", all_zero=True)
    w_plus = float(r[d > 0].sum())
    w_minus = float(r[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= exact_max_n:
        p = min(1.0, 2.0 * _exact_lower_tail(r, w))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, t = np.unique(r, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (t**3 - t).sum() / 48.0
        z = (min(w + 0.5, mean) - mean) / math.sqrt(var)
        p = min(1.0, 2.0 * sps.norm.cdf(z))
        method = "normal"
    return WilcoxonResult(w, p, n, w_plus, w_minus, method)


def wilcoxon_normal_p(sample: PairedSample) -> float:
    """Tie-corrected normal approximation p-value, regardless of n."""
    return wilcoxon_signed_rank(sample, exact_max_n=-1).p_two_sided


# --------------------------------------------------------------------------
# scenario tables


@dataclass
class ScenarioTable:
    """Per-scenario SubjectMetrics rows over a common subject set."""

    rows: dict[str, list[SubjectMetrics]]
    provenance: str = "computed"

    def __post_init__(self):
        ids = None
        for sc, ms in self.rows.items():
            these = [m.subject_id for m in ms]
            if ids is None:
                ids = these
            elif these != ids:
                raise ValueError(f"scenario {sc} covers a different subject set")

    @property
    def subjects(self) -> list[int]:
        first = next(iter(self.rows.values()), [])
        return [m.subject_id for m in first]

    def column(self, scenario: str, col: str) -> np.ndarray:
        return np.array([getattr(m, f"{col}_acc") for m in self.rows[scenario]], dtype=float)

    def chance(self) -> np.ndarray:
        first = next(iter(self.rows.values()), [])
        return np.array([m.chance_level for m in first], dtype=float)

    def header(self) -> list[str]:
        cols = ["subject", "chance"]
        for sc in self.rows:
            cols += [f"{sc}_{c}" for c in COLUMNS]
        return cols + ["provenance"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        chance = self.chance()
        for i, sid in enumerate(self.subjects):
            row = [sid, f"{chance[i]:.2f}"]
            for sc in self.rows:
                m = self.rows[sc][i]
                row += [f"{m.overall_acc:.2f}", f"{m.left_acc:.2f}", f"{m.right_acc:.2f}"]
            w.writerow(row + [self.provenance])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScenarioTable":
        reader = csv.DictReader(io.StringIO(text))
        fields = reader.fieldnames or []
        scenarios = []
        for f in fields:
            if f.endswith("_overall"):
                scenarios.append(f[: -len("_overall")])
        rows: dict[str, list[SubjectMetrics]] = {sc: [] for sc in scenarios}
        prov = "computed"
        for rec in reader:
            for sc in scenarios:
                try:
                    rows[sc].append(
                        SubjectMetrics(
                            subject_id=int(rec["subject"]),
                            overall_acc=float(rec[f"{sc}_overall"]),
                            left_acc=float(rec[f"{sc}_left"]),
                            right_acc=float(rec[f"{sc}_right"]),
                            chance_level=float(rec["chance"]),
                        )
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"missing or malformed cell for scenario {sc}: {exc}") from exc
            prov = rec.get("provenance") or prov
        return cls(rows, prov)


def load_table1() -> ScenarioTable:
    """The paper's 16-subject accuracy table, shipped as package data."""
    text = resources.files("neurocam.data").joinpath("table1.csv").read_text()
    return ScenarioTable.from_csv(text)


@dataclass
class ColumnSummary:
    scenario: str
    column: str
    mean: float
    sd: float


@dataclass
class Comparison:
    a: str
    b: str
    mean_difference: float
    wilcoxon: WilcoxonResult

    @property
    def verdict(self) -> str:
        return "significant" if self.wilcoxon.significant() else "not significant"


@dataclass
class TableSummary:
    columns: list[ColumnSummary]
    chance_mean: float
    chance_sd: float
    comparisons: list[Comparison]

    def get(self, scenario: str, column: str = "overall") -> ColumnSummary:
        for c in self.columns:
            if c.scenario == scenario and c.column == column:
                return c
        raise KeyError((scenario, column))

    def comparison(self, a: str, b: str) -> Comparison:
        for c in self.comparisons:
            if (c.a, c.b) == (a, b):
                return c
        raise KeyError((a, b))


DEFAULT_PAIRS = (("all64", "gradcam17"), ("all64", "mi21"), ("mi21", "gradcam17"))


def summarize_table(table: ScenarioTable, pairs=DEFAULT_PAIRS) -> TableSummary:
    """Mean and sample SD (ddof=1) per column, plus paired overall-accuracy comparisons."""
    cols = []
    for sc in table.rows:
        for c in COLUMNS:
            v = table.column(sc, c)
            if np.any(~np.isfinite(v)):
                raise ValueError(f"missing cells in {sc}/{c}")
            cols.append(ColumnSummary(sc, c, float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0))
    comps = []
    for a, b in pairs:
        if a in table.rows and b in table.rows:
            va, vb = table.column(a, "overall"), table.column(b, "overall")
            res = wilcoxon_signed_rank(PairedSample(va, vb, table.subjects)) if len(va) >= 2 else None
            comps.append(Comparison(a, b, float(va.mean() - vb.mean()), res))
    ch = table.chance()
    return TableSummary(cols, float(ch.mean()), float(ch.std(ddof=1)) if len(ch) > 1 else 0.0, comps)


def format_summary(summary: TableSummary) -> str:
    lines = []
    lines.append(f"chance: {summary.chance_mean:.2f}±{summary.chance_sd:.2f}")
    for c in summary.columns:
        lines.append(f"{c.scenario:>10s} {c.column:<8s} {c.mean:6.2f}±{c.sd:.2f}")
    for c in summary.comparisons:
        w = c.wilcoxon
        lines.append(
            f"{c.a} - {c.b}: {c.mean_difference:+.2f} pts, W={w.w:g}, p={w.p_two_sided:.4f} ({c.verdict})"
        )
    return "\n".join(lines)
