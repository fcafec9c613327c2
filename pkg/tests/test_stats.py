import itertools
from fractions import Fraction
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurocam.stats import (
    PairedSample,
    ScenarioTable,
    chance_level,
    format_summary,
    load_table1,
    majority_baseline,
    select_participants,
    signed_ranks,
    summarize_table,
    wilcoxon_normal_p,
    wilcoxon_signed_rank,
)
from neurocam.training import SubjectMetrics


# -- independent oracles ----------------------------------------------------

def binom_chance_oracle(n, alpha=0.05):
    """Exact integer tail sums with p0 = 1/2."""
    tail = 0
    total = 2**n
    num, den = Fraction(alpha).limit_denominator(10**6).as_integer_ratio()
    # walk k downward from n accumulating P[X >= k]
    best = n + 1
    c = 1  # C(n, k), updated by the ratio C(n, k-1) = C(n, k) * k / (n - k + 1)
    for k in range(n, -1, -1):
        tail += c
        c = c * k // (n - k + 1)
        if tail * den <= num * total:
            best = k
        else:
            break
    best = min(best, n)
    return 100.0 * best / n


def wilcoxon_dp_oracle(d):
    """Two-sided exact p by a counting DP over doubled mid-ranks."""
    d = [x for x in d if x != 0]
    absd = sorted(abs(x) for x in d)
    ranks2 = {}
    i = 0
    while i < len(absd):
        j = i
        while j < len(absd) and absd[j] == absd[i]:
            j += 1
        ranks2[absd[i]] = (i + 1) + j  # twice the mid-rank, an integer
        i = j
    r2 = [ranks2[abs(x)] for x in d]
    wplus2 = sum(r for r, x in zip(r2, d) if x > 0)
    wminus2 = sum(r for r, x in zip(r2, d) if x < 0)
    w2 = min(wplus2, wminus2)
    counts = {0: 1}
    for r in r2:
        nxt = dict(counts)
        for s, c in counts.items():
            nxt[s + r] = nxt.get(s + r, 0) + c
        counts = nxt
    low = sum(c for s, c in counts.items() if s <= w2)
    return min(1.0, 2 * low / 2 ** len(r2)), w2 / 2


def wilcoxon_bruteforce(ranks, w):
    n = len(ranks)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        if sum(r for r, s in zip(ranks, signs) if s) <= w + 1e-9:
            hits += 1
    return min(1.0, 2 * hits / 2**n)


# -- chance level / baselines -------------------------------------------------

def test_chance_level_examples():
    assert chance_level(93) == pytest.approx(100 * 55 / 93, abs=1e-12)
    assert chance_level(93) == pytest.approx(59.14, abs=0.005)
    assert chance_level(1) == 100.0
    assert chance_level(10000) == pytest.approx(50.83, abs=0.01)


@pytest.mark.parametrize("n", [1, 2, 5, 17, 40, 93, 150, 400, 10000])
def test_chance_level_matches_integer_oracle(n):
    assert chance_level(n) == pytest.approx(binom_chance_oracle(n), abs=1e-12)


def test_chance_level_non_increasing_grid():
    # a binomial step can bump k*/n up slightly; the bound is monotone up to 1/n
    vals = np.array([chance_level(n) for n in range(10, 1001)])
    assert np.all(vals[1:] <= vals[:-1] + 100.0 / np.arange(11, 1001) + 1e-12)
    assert vals[-1] < vals[0]


def test_chance_level_errors():
    for args in [(0,), (10, 0.0), (10, 1.0), (10, 0.05, 1.0)]:
        with pytest.raises(ValueError):
            chance_level(*args)


def test_majority_baseline():
    assert majority_baseline(["L", "L", "R"]) == pytest.approx(66.67, abs=0.005)
    assert majority_baseline([0, 1] * 20) == 50.0
    assert majority_baseline(["L"] * 53 + ["R"] * 40) == pytest.approx(56.99, abs=0.005)
    with pytest.raises(ValueError):
        majority_baseline([])


def test_select_participants():
    rows = [
        SubjectMetrics(15, 68.82, 0, 0, 58.81),
        SubjectMetrics(3, 66.0, 0, 0, 58.0),
        SubjectMetrics(8, 58.5, 0, 0, 58.0),
        SubjectMetrics(9, 57.0, 0, 0, 58.0),
    ]
    assert select_participants(rows, 10) == [15]
    assert select_participants(rows, 0) == [15, 3, 8]
    t = load_table1()
    assert select_participants(t.rows["all64"], 10) == t.subjects


# -- Wilcoxon -----------------------------------------------------------------

def test_wilcoxon_five_positive():
    r = wilcoxon_signed_rank(PairedSample([2, 3, 4, 5, 6], [1, 1, 1, 1, 1]))
    assert r.w == 0 and r.n_effective == 5 and r.method == "exact"
    assert r.p_two_sided == pytest.approx(2 / 32, abs=1e-15)


def test_wilcoxon_all_zero():
    r = wilcoxon_signed_rank(PairedSample([1, 2, 3], [1, 2, 3]))
    assert r.p_two_sided == 1.0 and r.all_zero and r.n_effective == 0
    assert not r.significant()


def test_wilcoxon_zeros_dropped():
    r = wilcoxon_signed_rank(PairedSample([2, 3, 4, 5, 6, 7], [1, 1, 1, 1, 1, 7]))
    assert r.n_effective == 5


def test_paired_sample_errors():
    with pytest.raises(ValueError):
        PairedSample([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        PairedSample([1], [2])
    with pytest.raises(ValueError):
        PairedSample([1, np.nan], [2, 3])


def test_signed_ranks_ties_on_rounded_differences():
    d, r = signed_ranks([70.97, 68.82, 60.0], [65.59, 63.44, 58.0])
    assert r[0] == r[1] == 2.5 and r[2] == 1


@pytest.mark.parametrize("seed", range(10))
def test_wilcoxon_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 15))
    a = np.round(rng.normal(70, 5, n), 0)
    b = np.round(a - rng.normal(1, 3, n), 0)  # integers: plenty of ties and zeros
    res = wilcoxon_signed_rank(PairedSample(a, b))
    p_dp, w_dp = wilcoxon_dp_oracle(list(np.round(a - b, 9)))
    assert res.w == pytest.approx(w_dp, abs=1e-12)
    assert abs(res.p_two_sided - p_dp) <= 1e-12
    _, ranks = signed_ranks(a, b)
    assert abs(res.p_two_sided - wilcoxon_bruteforce(list(ranks), res.w)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.tuples(st.integers(40, 100), st.integers(40, 100)), min_size=5, max_size=12),
    st.floats(-50, 50, allow_nan=False),
    st.floats(0.1, 10, allow_nan=False),
)
def test_wilcoxon_shift_scale_invariance(pairs, shift, scale):
    a = np.array([p[0] for p in pairs], float)
    b = np.array([p[1] for p in pairs], float)
    base = wilcoxon_signed_rank(PairedSample(a, b))
    moved = wilcoxon_signed_rank(PairedSample(a + shift, b + shift))
    scaled = wilcoxon_signed_rank(PairedSample(a * scale, b * scale))
    assert moved.p_two_sided == pytest.approx(base.p_two_sided, abs=1e-12)
    assert scaled.p_two_sided == pytest.approx(base.p_two_sided, abs=1e-12)


def test_wilcoxon_exact_close_to_normal_at_16():
    # sanity band 0.01; the continuity-corrected approximation peaks at ~0.0104 near p = 0.25
    gaps = []
    for seed in range(200):
        rng = np.random.default_rng(100 + seed)
        a = rng.normal(0, 1, 16)
        s = PairedSample(a, a + rng.normal(0.3, 1, 16))
        gaps.append(abs(wilcoxon_signed_rank(s).p_two_sided - wilcoxon_normal_p(s)))
    gaps = np.array(gaps)
    assert np.mean(gaps <= 0.01) >= 0.9
    assert gaps.max() <= 0.0105


def test_wilcoxon_large_n_uses_normal():
    rng = np.random.default_rng(0)
    a = rng.normal(size=30)
    r = wilcoxon_signed_rank(PairedSample(a, a + rng.normal(0.5, 1, 30)))
    assert r.method == "normal" and 0 <= r.p_two_sided <= 1


# -- bundled table ------------------------------------------------------------

def test_table1_shape_and_provenance():
    t = load_table1()
    assert len(t.subjects) == 16
    assert set(t.rows) == {"all64", "gradcam17", "mi21"}
    assert t.provenance == "paper"


def test_summarize_table_values():
    s = summarize_table(load_table1())
    for sc, mean, sd in [("all64", 72.60, 4.54), ("gradcam17", 66.63, 5.68), ("mi21", 70.85, 5.35)]:
        c = s.get(sc)
        assert c.mean == pytest.approx(mean, abs=0.01)
        assert c.sd == pytest.approx(sd, abs=0.01)
    assert s.comparison("all64", "gradcam17").mean_difference == pytest.approx(5.97, abs=0.01)
    assert s.comparison("all64", "mi21").verdict == "not significant"
    cmp = s.comparison("all64", "gradcam17")
    assert cmp.wilcoxon.w == 9.5 and cmp.verdict == "significant"
    text = format_summary(s)
    assert "72.60" in text and "significant" in text


def test_summarize_recomputes_from_rows():
    t = load_table1()
    s = summarize_table(t)
    for sc in t.rows:
        for col in ("overall", "left", "right"):
            v = [getattr(m, f"{col}_acc") for m in t.rows[sc]]
            assert s.get(sc, col).mean == pytest.approx(sum(v) / len(v), abs=0.005)


def test_scenario_table_csv_round_trip():
    t = load_table1()
    back = ScenarioTable.from_csv(t.to_csv())
    assert back.to_csv() == t.to_csv()
    assert back.subjects == t.subjects


def test_scenario_table_errors():
    with pytest.raises(ValueError, match="different subject set"):
        ScenarioTable({"a": [SubjectMetrics(1, 1, 1, 1, 1)], "b": [SubjectMetrics(2, 1, 1, 1, 1)]})
    text = load_table1().to_csv().splitlines()
    text[1] = ",".join(text[1].split(",")[:3])
    with pytest.raises(ValueError):
        ScenarioTable.from_csv("\n".join(text))


def test_summary_runtime():
    t0 = time.perf_counter()
    summarize_table(load_table1())
    assert time.perf_counter() - t0 < 1.0
