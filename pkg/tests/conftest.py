import numpy as np
import pytest

from neurocam import tensor as T


def check_grad(fn, x, eps=1e-5, coords=None, zero_atol=1e-7, zero_tol=1e-10):
    """Relative FD error over coordinates with a non-negligible gradient.

    Coordinates whose autodiff gradient is zero up to round-off (``|g| <=
    zero_tol``) are compared absolutely instead, because the relative metric
    divides FD round-off by the 1e-8 floor there. These are structural zeros:
    uncovered pool columns, gated ReLU inputs, conv biases ahead of a
    batch-statistics normalization, attention key biases. Returns the worst
    relative error.
    """
    x = np.asarray(x, dtype=float)
    t = T.Tensor(x.copy(), requires_grad=True)
    T.backward(fn(t))
    g = t.grad.ravel()
    idx = np.arange(x.size) if coords is None else np.asarray(coords)
    live = [i for i in idx if abs(g[i]) > zero_tol]
    dead = [i for i in idx if abs(g[i]) <= zero_tol]
    for i in dead:
        flat = x.ravel().copy()
        flat[i] += eps
        fp = float(fn(T.Tensor(flat.reshape(x.shape))).data)
        flat[i] -= 2 * eps
        fm = float(fn(T.Tensor(flat.reshape(x.shape))).data)
        assert abs(fp - fm) / (2 * eps) < zero_atol, f"coordinate {i}: autodiff 0, FD {(fp - fm) / (2 * eps)}"
    return T.grad_check(fn, x, eps, indices=live) if live else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# desk-scale synthetic study shared by the acceptance and faithfulness tests

PLANTED = {"Left": ["C4", "CP4"], "Right": ["C3", "CP3"]}
STUDY_SEEDS = range(10)
MI21_SEEDS = range(3)


def _desk_train(trn, tst, seed):
    from neurocam.model import ConformerConfig, build
    from neurocam.training import Hyperparams, evaluate, train

    cfg = ConformerConfig(
        n_channels=trn.n_channels, n_times=trn.n_times, n_feature_maps=4, heads=2, encoder_depth=1, fc_hidden=16, dropout_p=0.25
    )
    hp = Hyperparams(learning_rate=3e-3, epochs=20, seed=seed, weight_decay=0.5, batch_size=16)
    params, _ = train(build(cfg, seed), trn, hp)
    return params, evaluate(params, tst, 50.0).overall_acc


def _one_seed(seed):
    import time

    from neurocam.channels import complement, far_from, load_montage, mi_channels, subset_epochs, top_k_union
    from neurocam.dsp import EpochSet, design_bandpass, filter_zero_phase, zscore_normalize
    from neurocam.gradcam import channel_relevance, explain_epochs
    from neurocam.report import lateralization_index
    from neurocam.stats import majority_baseline
    from neurocam.synth import SynthSpec, generate
    from neurocam.training import split_dataset

    t0 = time.process_time()
    mont = load_montage()
    raw, truth = generate(SynthSpec(n_trials=200, seed=seed))
    assert truth["planted"] == PLANTED
    flt = EpochSet(filter_zero_phase(design_bandpass(8, 30, 160), raw.data), raw.labels, raw.channel_labels, 160.0, raw.provenance)
    trn, tst = split_dataset(flt, 0.25, seed)
    trn, st = zscore_normalize(trn)
    tst, _ = zscore_normalize(tst, st)
    params, acc = _desk_train(trn, tst, seed)
    maps = explain_epochs(params, tst, with_guided=True)
    rank = {c: channel_relevance(maps, tst.channel_labels, c) for c in ("Left", "Right")}
    planted = PLANTED["Left"] + PLANTED["Right"]
    union = top_k_union(rank["Left"], rank["Right"], 10)
    _, acc_planted = _desk_train(subset_epochs(trn, planted), subset_epochs(tst, planted), seed)
    disjoint = complement(tst.channel_labels, planted, 17, prefer=far_from(mont, planted))
    _, acc_disjoint = _desk_train(subset_epochs(trn, disjoint), subset_epochs(tst, disjoint), seed)
    cpu = time.process_time() - t0

    idx = [tst.channel_labels.index(c) for c in planted]
    shares = []
    for m in maps:
        if m.correct:
            g = np.abs(m.guided_gradcam())
            shares.append(g[idx].sum() / g.sum())
    out = {
        "seed": seed,
        "acc": acc,
        "rank": rank,
        "union": union,
        "disjoint": disjoint,
        "acc_planted": acc_planted,
        "acc_disjoint": acc_disjoint,
        "majority": majority_baseline(tst.labels),
        "guided_share": float(np.mean(shares)),
        "cpu_seconds": cpu,
    }
    if seed in MI21_SEEDS:
        mi = mi_channels(mont)
        t_mi = subset_epochs(tst, mi)
        p_mi, out["acc_mi21"] = _desk_train(subset_epochs(trn, mi), t_mi, seed)
        m_mi = explain_epochs(p_mi, t_mi)
        out["lateralization_mi21"] = {
            c: lateralization_index(channel_relevance(m_mi, t_mi.channel_labels, c).scores, mont) for c in ("Left", "Right")
        }
    return out


@pytest.fixture(scope="session")
def synthetic_study():
    """Ten seeded desk-scale runs: train all-64, explain, retrain on planted and on disjoint channels."""
    return [_one_seed(s) for s in STUDY_SEEDS]
