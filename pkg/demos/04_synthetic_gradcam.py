"""
Grad-CAM channel relevance on synthetic ERD data
================================================

Trains the small conv+attention model on synthetic two-class EEG with
planted mu desynchronization, ranks electrodes with Grad-CAM, retrains
on the selected union, and writes montage and scalp-map SVGs.
Takes about 30 seconds on one core.
"""
import sys
from pathlib import Path

from neurocam.channels import load_montage, subset_epochs, top_k_union
from neurocam.dsp import EpochSet, design_bandpass, filter_zero_phase, zscore_normalize
from neurocam.gradcam import channel_relevance, explain_epochs
from neurocam.model import ConformerConfig, build
from neurocam.report import lateralization_index, render_montage, render_topomap
from neurocam.synth import SynthSpec, generate
from neurocam.training import Hyperparams, evaluate, split_dataset, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
seed = 0

raw, truth = generate(SynthSpec(n_trials=200, seed=seed))
print("planted ERD channels:", truth["planted"])
epochs = EpochSet(filter_zero_phase(design_bandpass(8, 30, 160), raw.data), raw.labels, raw.channel_labels, 160.0, raw.provenance)
trn, tst = split_dataset(epochs, 0.25, seed)
trn, stats = zscore_normalize(trn)
tst, _ = zscore_normalize(tst, stats)


def fit(train_set, test_set):
    cfg = ConformerConfig(n_channels=train_set.n_channels, n_feature_maps=4, heads=2, encoder_depth=1, fc_hidden=16, dropout_p=0.25)
    hp = Hyperparams(learning_rate=3e-3, epochs=20, batch_size=16, weight_decay=0.5, seed=seed)
    params, _ = train(build(cfg, seed), train_set, hp)
    return params, evaluate(params, test_set, 50.0)


params, m = fit(trn, tst)
print(f"all 64 channels: {m.overall_acc:.1f}% (left {m.left_acc:.1f}, right {m.right_acc:.1f})")

# Grad-CAM at the temporal-conv output keeps one row per electrode
maps = explain_epochs(params, tst)
rank = {c: channel_relevance(maps, tst.channel_labels, c) for c in ("Left", "Right")}
for c, r in rank.items():
    print(f"{c:5s} top-5: {', '.join(r.top(5))}")
# ERD means less mu power on the active class's own planted channels, so
# activation x gradient ranks the opposite hemisphere's planted pair first

union = top_k_union(rank["Left"], rank["Right"], 10)
print(f"top-10 union: {len(union)} channels; common to both classes: {union.provenance['common']}")
_, m_u = fit(subset_epochs(trn, union), subset_epochs(tst, union))
print(f"retrained on the union: {m_u.overall_acc:.1f}%")

mont = load_montage()
counts = {ch: int(ch in union.labels) for ch in mont.labels}
(out / "montage_union.svg").write_text(render_montage(counts, mont, len(union), title="Grad-CAM union"))
for c, r in rank.items():
    (out / f"cat_{c}.svg").write_text(render_topomap(r.scores, mont, title=f"{c} class"))
    print(f"{c} lateralization index {lateralization_index(r.scores, mont):+.3f}")
print(f"figures in {out}/")
