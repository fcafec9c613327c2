import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurocam.channels import (
    MI_CHANNELS,
    ChannelSubset,
    MontageLayout,
    aggregate_rankings,
    complement,
    far_from,
    load_montage,
    mi_channels,
    normalize_label,
    subset_epochs,
    top_k_union,
)
from neurocam.dsp import EpochSet
from neurocam.gradcam import rank_channels

MONT = load_montage()
LABELS = MONT.labels


def ranking(order, cls="Left"):
    scores = {ch: float(len(order) - i) for i, ch in enumerate(order)}
    return rank_channels(cls, scores, LABELS)


def toy_epochs(n=6, labels=LABELS):
    rng = np.random.default_rng(0)
    return EpochSet(rng.standard_normal((n, len(labels), 20)), np.array([0, 1] * (n // 2)), list(labels), 160.0, [(1, 1, i, 0) for i in range(n)])


@pytest.mark.parametrize("raw,want", [("Fc5.", "FC5"), ("Cz..", "Cz"), ("Fpz.", "Fpz"), ("Fp1.", "Fp1"), ("Iz..", "Iz"), ("T10.", "T10")])
def test_normalize_label(raw, want):
    assert normalize_label(raw) == want


def test_montage_geometry():
    assert len(MONT) == 64
    assert len(set(LABELS)) == 64
    for v in MONT.entries.values():
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)
    proj = MONT.projection
    assert np.allclose(proj["Cz"], 0.0)
    assert max(np.linalg.norm(p) for p in proj.values()) <= 1.0 + 1e-9
    # left hemisphere channels sit on the negative-x side
    assert proj["C3"][0] < 0 < proj["C4"][0]


def test_montage_csv_round_trip():
    back = MontageLayout.from_csv(MONT.to_csv())
    assert back.labels == LABELS
    for lab in LABELS:
        assert np.allclose(back.entries[lab], MONT.entries[lab], atol=1e-8)


def test_montage_rejects_off_sphere():
    with pytest.raises(ValueError, match="unit sphere"):
        MontageLayout("bad", {"Cz": np.array([0.0, 0.0, 2.0])})


def test_union_identical_is_k():
    r = ranking(LABELS)
    assert len(top_k_union(r, ranking(LABELS, "Right"), 10)) == 10


def test_union_disjoint_is_2k():
    left = ranking(LABELS)
    right = ranking(LABELS[10:] + LABELS[:10], "Right")
    u = top_k_union(left, right, 10)
    assert len(u) == 20
    assert u.provenance["common"] == []


def test_union_three_shared_is_17():
    left = ranking(LABELS)
    right_order = LABELS[:3] + LABELS[20:27] + [c for c in LABELS if c not in LABELS[:3] + LABELS[20:27]]
    u = top_k_union(left, ranking(right_order, "Right"), 10)
    assert len(u) == 17
    assert set(u.provenance["common"]) == set(LABELS[:3])
    assert u.origin == "gradcam_union"


@settings(max_examples=50, deadline=None)
@given(st.permutations(LABELS), st.permutations(LABELS), st.integers(1, 64))
def test_union_size_bounds(a, b, k):
    u = top_k_union(ranking(list(a)), ranking(list(b), "Right"), k)
    assert k <= len(u) <= min(2 * k, 64)
    assert set(u.labels) == set(a[:k]) | set(b[:k])


def test_union_mismatched_sets():
    other = rank_channels("Right", {c: 1.0 for c in LABELS[:10]}, LABELS)
    with pytest.raises(ValueError, match="different channel sets"):
        top_k_union(ranking(LABELS), other, 5)
    with pytest.raises(ValueError):
        top_k_union(ranking(LABELS), ranking(LABELS), 0)


def test_mi_channels():
    s = mi_channels(MONT)
    assert len(s) == 21
    assert all(c[:-1] in ("FC", "C", "CP") or c[:-1] in ("F", "C") for c in s.labels)
    assert all(c.rstrip("123456z") in ("FC", "C", "CP") for c in s.labels)
    assert s.origin == "domain_mi21"


def test_mi_channels_missing_label():
    with pytest.raises(ValueError, match="CPz"):
        mi_channels([c for c in LABELS if c != "CPz"])


def test_subset_epochs():
    e = toy_epochs()
    sub = subset_epochs(e, mi_channels(MONT))
    assert sub.data.shape == (6, 21, 20)
    assert sub.channel_labels == list(MI_CHANNELS)
    assert np.array_equal(sub.data[:, 0], e.data[:, LABELS.index("FC5")])
    ident = subset_epochs(e, LABELS)
    assert np.array_equal(ident.data, e.data)
    again = subset_epochs(sub, list(MI_CHANNELS))
    assert np.array_equal(again.data, sub.data)


def test_subset_epochs_errors():
    e = toy_epochs()
    with pytest.raises(ValueError, match="empty"):
        subset_epochs(e, [])
    with pytest.raises(ValueError, match="XX9"):
        subset_epochs(e, ["C3", "XX9"])


def test_channel_subset_json_and_distinct():
    s = ChannelSubset(["C3", "C4"], "manual", {"why": "test"})
    back = ChannelSubset.from_json(s.to_json())
    assert back.labels == s.labels and back.origin == s.origin and back.provenance == s.provenance
    with pytest.raises(ValueError):
        ChannelSubset(["C3", "C3"])
    with pytest.raises(ValueError):
        ChannelSubset(["C3"], origin="random")


def test_complement_and_far_from():
    planted = ["C3", "CP3", "C4", "CP4"]
    far = far_from(MONT, planted)
    assert far[-1] in planted
    pick = complement(LABELS, planted, 17, prefer=far)
    assert len(pick) == 17 and not set(pick) & set(planted)
    assert complement(LABELS, planted)[:2] == ["FC5", "FC3"]
    with pytest.raises(ValueError):
        complement(LABELS, planted, 61)


def test_aggregate_rankings():
    rng = np.random.default_rng(3)
    rs = [ranking(list(rng.permutation(LABELS))) for _ in range(5)]
    counts = aggregate_rankings(rs, 10)
    assert sum(counts.values()) == 50
    one = aggregate_rankings(rs[:1], 10)
    assert {c for c, v in one.items() if v} == set(rs[0].order[:10])
    assert set(one.values()) == {0, 1}
    same = aggregate_rankings([rs[0]] * 4, 10)
    assert {v for c, v in same.items() if c in rs[0].order[:10]} == {4}
    assert aggregate_rankings([]) == {}
