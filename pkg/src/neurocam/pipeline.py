"""Config-driven experiment: preprocess, train all-64, explain, select channels, retrain, stats, figures.

Every stage reads and writes files under ``<output>/S<id>/`` so the CLI can
run stages one by one; :func:`run_pipeline` chains them per subject.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from neurocam import channels as ch
from neurocam import edf, report, synth
from neurocam.dsp import EpochSet, design_bandpass, epochs_from_recording, filter_recording, filter_zero_phase, morlet_tfr, zscore_normalize
from neurocam.fetch import ENV_ROOT, fetch_subject
from neurocam.gradcam import ChannelRanking, channel_relevance, explain_epochs, temporal_relevance
from neurocam.model import CLASSES, ConformerConfig, ModelParams, build
from neurocam.stats import SCENARIOS, ScenarioTable, chance_level, format_summary, select_participants, summarize_table
from neurocam.training import Hyperparams, SubjectMetrics, evaluate, split_dataset, train

log = logging.getLogger(__name__)


def _ints(text: str) -> list[int]:
    return [int(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _strs(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    source: str = "physionet"  # or "synthetic"
    data_root: str = "data"
    base_url: str = "https://physionet.org/files/eegmmidb/1.0.0/"
    subjects: list = field(default_factory=list)
    runs: list = field(default_factory=lambda: [3, 4, 7, 8, 11, 12])
    low_cut: float = 8.0
    high_cut: float = 30.0
    filter_order: int = 4
    window_seconds: float = 1.0
    test_fraction: float = 0.25
    split_seed: int = 0
    model: ConformerConfig = field(default_factory=ConformerConfig)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    layer: str = "temporal_conv"
    top_k: int = 10
    correct_only: bool = True
    relevance_source: str = "gradcam"
    scenarios: list = field(default_factory=lambda: list(SCENARIOS))
    mi_channels: list = field(default_factory=lambda: list(ch.MI_CHANNELS))
    selection_margin: float = 10.0
    output: str = "runs/default"
    threads: int = 1
    synth: synth.SynthSpec | None = None

    def validate(self) -> None:
        if self.source not in ("physionet", "synthetic"):
            raise ValueError("source must be 'physionet' or 'synthetic'")
        unknown = set(self.scenarios) - set(SCENARIOS)
        if unknown:
            raise ValueError(f"unknown scenario(s): {sorted(unknown)}")
        if self.relevance_source not in ("gradcam", "guided_gradcam"):
            raise ValueError("relevance_source must be 'gradcam' or 'guided_gradcam'")
        self.model.validate()

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict()
        d["hyper"] = self.hyper.to_dict()
        d["synth"] = None if self.synth is None else {k: v for k, v in self.synth.to_dict().items() if k != "channel_labels"}
        return d


_SECTION_KEYS = {
    "data": {"source": str, "root": ("data_root", str), "base_url": str, "subjects": _ints, "runs": _ints},
    "preprocess": {"low_cut": float, "high_cut": float, "filter_order": int, "window_seconds": float},
    "split": {"test_fraction": float, "seed": ("split_seed", int)},
    "explain": {"layer": str, "top_k": int, "correct_only": "bool", "relevance_source": str},
    "run": {"scenarios": _strs, "output": str, "threads": int, "selection_margin": float, "mi_channels": _strs},
}


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI file (sections data, preprocess, split, model, train, explain, run, synthetic).

    Missing keys keep their defaults. ``overrides`` maps "section.key" to a
    string value and wins over the file. $NEUROCAM_DATA_ROOT, when set,
    replaces ``data.root``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        with open(path) as f:
            cp.read_file(f)
    for key, val in (overrides or {}).items():
        sec, _, opt = key.partition(".")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, opt, str(val))
    cfg = ExperimentConfig()
    for sec, keys in _SECTION_KEYS.items():
        if not cp.has_section(sec):
            continue
        for opt in cp.options(sec):
            if opt not in keys:
                raise ValueError(f"unknown config key [{sec}] {opt}")
            spec = keys[opt]
            attr, conv = spec if isinstance(spec, tuple) else (opt, spec)
            val = cp.getboolean(sec, opt) if conv == "bool" else conv(cp.get(sec, opt))
            setattr(cfg, attr, val)
    for sec, target, cls in (("model", "model", ConformerConfig), ("train", "hyper", Hyperparams)):
        if cp.has_section(sec):
            types = {f.name: f.type for f in fields(cls)}
            kw = {}
            for opt in cp.options(sec):
                if opt not in types:
                    raise ValueError(f"unknown config key [{sec}] {opt}")
                kw[opt] = float(cp.get(sec, opt)) if types[opt] in ("float", float) else int(cp.get(sec, opt))
            setattr(cfg, target, cls(**{**getattr(cfg, target).__dict__, **kw}))
    if cp.has_section("synthetic") or cfg.source == "synthetic":
        kw = {}
        if cp.has_section("synthetic"):
            types = {f.name: f.type for f in fields(synth.SynthSpec)}
            for opt in cp.options("synthetic"):
                if opt not in types or opt == "channel_labels":
                    raise ValueError(f"unknown config key [synthetic] {opt}")
                raw = cp.get("synthetic", opt)
                t = types[opt]
                kw[opt] = tuple(_strs(raw)) if t in ("tuple", tuple) else (int(raw) if t in ("int", int) else float(raw))
        cfg.synth = synth.SynthSpec(**kw)
    if os.environ.get(ENV_ROOT):
        cfg.data_root = os.environ[ENV_ROOT]
    if os.environ.get("NEUROCAM_THREADS"):
        cfg.threads = int(os.environ["NEUROCAM_THREADS"])
    cfg.validate()
    return cfg


def example_config(name: str = "synthetic.ini") -> str:
    return resources.files("neurocam.data").joinpath(name).read_text()


# --------------------------------------------------------------------------
# stages


def subject_dir(cfg: ExperimentConfig, sid: int) -> Path:
    return Path(cfg.output) / f"S{sid:03d}"


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def stage_fetch(cfg: ExperimentConfig, sid: int) -> list[Path]:
    if cfg.source != "physionet":
        return []
    return fetch_subject(sid, cfg.runs, cfg.data_root, cfg.base_url)


def stage_preprocess(cfg: ExperimentConfig, sid: int) -> EpochSet:
    """Band-pass and window one subject; writes ``epochs.bin/.json``."""
    spec = design_bandpass(cfg.low_cut, cfg.high_cut, 160.0 if cfg.synth is None else cfg.synth.fs, cfg.filter_order)
    if cfg.source == "synthetic":
        s = synth.SynthSpec(**{**cfg.synth.__dict__, "seed": cfg.synth.seed + sid})
        raw, truth = synth.generate(s)
        prov = raw.provenance.copy()
        prov[:, 0] = sid
        epochs = EpochSet(filter_zero_phase(spec, raw.data), raw.labels, raw.channel_labels, raw.sampling_rate, prov)
        d = subject_dir(cfg, sid)
        d.mkdir(parents=True, exist_ok=True)
        (d / "truth.json").write_text(json.dumps(truth, indent=1))
    else:
        paths = [Path(cfg.data_root) / f"S{sid:03d}" / f"S{sid:03d}R{r:02d}.edf" for r in cfg.runs]
        missing = [p for p in paths if not p.exists()]
        if missing:
            stage_fetch(cfg, sid)
        sets = []
        for p in paths:
            rec = edf.read_edf(p)
            problems = edf.validate_recording(rec)
            if any(v.kind in ("sampling_rate", "channel_count") for v in problems):
                log.warning("excluding %s: %s", p.name, "; ".join(v.detail for v in problems))
                continue
            eeg = [i for i, lab in enumerate(rec.channel_labels) if lab != edf.ANNOTATION_LABEL]
            rec.channel_labels = [ch.normalize_label(rec.channel_labels[i]) for i in eeg]
            rec.samples = rec.samples[eeg]
            filt = filter_recording(rec, spec)
            sets.append(epochs_from_recording(filt, edf.extract_trials(filt), cfg.window_seconds))
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError(f"subject {sid}: no usable epochs")
        epochs = EpochSet.concatenate(sets)
    d = subject_dir(cfg, sid)
    d.mkdir(parents=True, exist_ok=True)
    epochs.save(d / "epochs")
    return epochs


def _load_epochs(cfg, sid) -> EpochSet:
    p = subject_dir(cfg, sid) / "epochs.json"
    if not p.exists():
        return stage_preprocess(cfg, sid)
    return EpochSet.load(subject_dir(cfg, sid) / "epochs")


def _split(cfg, epochs: EpochSet) -> tuple[EpochSet, EpochSet]:
    trn, tst = split_dataset(epochs, cfg.test_fraction, cfg.split_seed)
    trn, stats = zscore_normalize(trn)
    tst, _ = zscore_normalize(tst, stats)
    return trn, tst


def _subset_for(cfg, sid, scenario: str, labels: list[str]) -> list[str]:
    if scenario == "all64":
        return labels
    if scenario == "mi21":
        return ch.mi_channels(labels, cfg.mi_channels).labels
    p = subject_dir(cfg, sid) / "subset_gradcam17.json"
    if not p.exists():
        raise FileNotFoundError(f"subject {sid}: gradcam17 needs a completed all64 explain/select stage ({p} missing)")
    return ch.ChannelSubset.from_json(p.read_text()).labels


def stage_train(cfg: ExperimentConfig, sid: int, scenario: str = "all64") -> SubjectMetrics:
    """Train and evaluate one scenario; writes ``params_<scenario>`` and ``metrics_<scenario>.json``."""
    epochs = _load_epochs(cfg, sid)
    trn, tst = _split(cfg, epochs)
    labels = _subset_for(cfg, sid, scenario, list(epochs.channel_labels))
    if scenario != "all64":
        trn, tst = ch.subset_epochs(trn, labels), ch.subset_epochs(tst, labels)
    mcfg = ConformerConfig(**{**cfg.model.to_dict(), "n_channels": len(labels), "n_times": trn.n_times})
    seed = cfg.hyper.seed + sid
    params = build(mcfg, seed)
    hp = Hyperparams(**{**cfg.hyper.to_dict(), "seed": seed, "batch_size": min(cfg.hyper.batch_size, len(trn))})
    params, hist = train(params, trn, hp)
    m = evaluate(params, tst, chance_level(len(tst)))
    m.subject_id = sid
    d = subject_dir(cfg, sid)
    params.save(d / f"params_{scenario}")
    (d / f"metrics_{scenario}.json").write_text(json.dumps({**m.__dict__, "channels": labels, "final_loss": hist.loss[-1] if hist.loss else None}, indent=1))
    (d / f"history_{scenario}.json").write_text(json.dumps({"loss": hist.loss, "train_acc": hist.train_acc}))
    return m


def stage_explain(cfg: ExperimentConfig, sid: int) -> dict[str, ChannelRanking]:
    """Grad-CAM rankings per class from the all-64 model on the subject's test epochs."""
    d = subject_dir(cfg, sid)
    pfile = d / "params_all64.json"
    if not pfile.exists():
        raise FileNotFoundError(f"subject {sid}: explain needs the all64 model ({pfile} missing)")
    params = ModelParams.load(d / "params_all64")
    _, tst = _split(cfg, _load_epochs(cfg, sid))
    maps = explain_epochs(params, tst, layer=cfg.layer, with_guided=cfg.relevance_source == "guided_gradcam")
    rankings = {}
    for c in CLASSES:
        try:
            r = channel_relevance(maps, tst.channel_labels, c, correct_only=cfg.correct_only, source=cfg.relevance_source)
        except ValueError:
            log.warning("subject %d: no correct %s epochs; ranking over all %s epochs", sid, c, c)
            r = channel_relevance(maps, tst.channel_labels, c, correct_only=False, source=cfg.relevance_source)
        rankings[c] = r
        (d / f"ranking_{c}.csv").write_text(r.to_csv())
    # per-class mean fine maps feed the CAT / TFR figures
    summary = {}
    for c in CLASSES:
        sel = [m for m in maps if m.class_label == c] or maps
        mean_fine = np.mean([m.fine for m in sel], axis=0)
        summary[c] = {
            "channel_scores": rankings[c].scores,
            "windows": temporal_relevance(mean_fine, 0.2, tst.sampling_rate),
        }
    (d / "explain.json").write_text(json.dumps(summary, indent=1))
    return rankings


def stage_select(cfg: ExperimentConfig, sid: int) -> ch.ChannelSubset:
    d = subject_dir(cfg, sid)
    try:
        r = {c: ChannelRanking.from_csv((d / f"ranking_{c}.csv").read_text()) for c in CLASSES}
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"subject {sid}: select needs Grad-CAM rankings ({exc.filename} missing)") from None
    subset = ch.top_k_union(r["Left"], r["Right"], cfg.top_k)
    (d / "subset_gradcam17.json").write_text(subset.to_json())
    mi = ch.mi_channels(list(r["Left"].order), cfg.mi_channels)
    (d / "subset_mi21.json").write_text(mi.to_json())
    return subset


def stage_subject(cfg: ExperimentConfig, sid: int) -> dict:
    """All per-subject stages; returns {scenario: SubjectMetrics}."""
    out = {}
    stage_preprocess(cfg, sid)
    for sc in cfg.scenarios:
        if sc == "gradcam17":
            if "all64" not in out:
                raise RuntimeError(f"subject {sid}: gradcam17 requires a completed all64 stage")
            stage_explain(cfg, sid)
            stage_select(cfg, sid)
        out[sc] = stage_train(cfg, sid, sc)
    return out


def collect_table(cfg: ExperimentConfig, subjects=None) -> ScenarioTable:
    subjects = cfg.subjects if subjects is None else subjects
    rows = {}
    for sc in cfg.scenarios:
        ms = []
        for sid in subjects:
            p = subject_dir(cfg, sid) / f"metrics_{sc}.json"
            if p.exists():
                d = json.loads(p.read_text())
                ms.append(SubjectMetrics(**{k: d[k] for k in SubjectMetrics.__dataclass_fields__}))
        rows[sc] = ms
    ids = None
    for sc, ms in rows.items():
        got = [m.subject_id for m in ms]
        ids = got if ids is None else [i for i in ids if i in got]
    rows = {sc: [m for m in ms if m.subject_id in (ids or [])] for sc, ms in rows.items()}
    return ScenarioTable(rows, "computed")


def stage_stats(cfg: ExperimentConfig) -> dict:
    table = collect_table(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = report.export_metrics(table, out)
    result = {"subjects": table.subjects, "metrics_csv": str(csv_path), "metrics_json": str(json_path)}
    if "all64" in table.rows and table.rows["all64"]:
        result["selected"] = select_participants(table.rows["all64"], cfg.selection_margin)
    if len(table.subjects) >= 2:
        s = summarize_table(table, pairs=[(a, b) for a, b in (("all64", "gradcam17"), ("all64", "mi21"), ("mi21", "gradcam17")) if a in table.rows and b in table.rows])
        result["summary"] = format_summary(s)
    (out / "stats.json").write_text(json.dumps(result, indent=1))
    return result


def stage_report(cfg: ExperimentConfig) -> list[Path]:
    """Montage, CAT and TFR figures from whatever explain/select artifacts exist."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    montage = ch.load_montage()
    figs: list[Path] = []
    rankings = {c: [] for c in CLASSES}
    for sid in cfg.subjects:
        d = subject_dir(cfg, sid)
        for c in CLASSES:
            p = d / f"ranking_{c}.csv"
            if p.exists():
                rankings[c].append(ChannelRanking.from_csv(p.read_text()))
        ex = d / "explain.json"
        if ex.exists():
            summary = json.loads(ex.read_text())
            epochs = _load_epochs(cfg, sid)
            _, tst = _split(cfg, epochs)
            for c in CLASSES:
                scores = {k: v for k, v in summary[c]["channel_scores"].items() if k in montage}
                if len(scores) >= 3:
                    f = out / f"cat_{sid}_{c}.svg"
                    f.write_text(report.render_topomap(scores, montage, title=f"S{sid:03d} {c}"))
                    figs.append(f)
                top = max(summary[c]["channel_scores"], key=summary[c]["channel_scores"].get)
                sel = tst.labels == CLASSES.index(c)
                if sel.any():
                    x = tst.data[sel][:, tst.channel_labels.index(top)]
                    tfrs = [morlet_tfr(xi, tst.sampling_rate, channel=top) for xi in x]
                    tfr = tfrs[0]
                    tfr.power = np.mean([t.power for t in tfrs], axis=0)
                    f = out / f"tfr_{sid}_{c}.svg"
                    f.write_text(report.render_tfr(tfr, [tuple(w) for w in summary[c]["windows"]], title=f"S{sid:03d} {c} {top}"))
                    figs.append(f)
    all_r = rankings["Left"] + rankings["Right"]
    if all_r:
        counts = ch.aggregate_rankings(all_r, cfg.top_k)
        counts = {k: v for k, v in counts.items() if k in montage}
        for c in CLASSES:
            agg = ch.aggregate_rankings(rankings[c], cfg.top_k) if rankings[c] else {}
            pos = {lab: i for i, lab in enumerate(montage.labels)}
            order = sorted(agg, key=lambda lab: (-agg[lab], pos.get(lab, 1 << 30)))
            lines = ["channel,score,rank,class"] + [f"{lab},{agg[lab]},{i + 1},{c}" for i, lab in enumerate(order)]
            (out / f"ranking_{c}.csv").write_text("\n".join(lines) + "\n")
        f = out / "montage_gradcam17.svg"
        f.write_text(report.render_montage(counts, montage, cfg.top_k, title="Grad-CAM top-k frequency"))
        figs.append(f)
    f = out / "montage_mi21.svg"
    f.write_text(report.render_montage({lab: 1.0 for lab in cfg.mi_channels if lab in montage}, montage, len(cfg.mi_channels), title="MI-21 channels"))
    figs.append(f)
    return figs


def run_pipeline(cfg: ExperimentConfig) -> dict:
    """Run every stage for every subject, then stats and figures; returns the manifest.

    A failing subject is recorded under ``errors`` and the rest continue.
    """
    cfg.validate()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    errors: dict[str, str] = {}

    def job(sid):
        try:
            stage_subject(cfg, sid)
            return sid, None
        except Exception as exc:  # recorded per subject
            log.exception("subject %d failed", sid)
            return sid, f"{type(exc).__name__}: {exc}"

    if cfg.threads > 1 and len(cfg.subjects) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(job, cfg.subjects))
    else:
        results = [job(s) for s in cfg.subjects]
    for sid, err in results:
        if err:
            errors[str(sid)] = err
    manifest = {"config": cfg.to_dict(), "subjects": list(cfg.subjects), "errors": errors, "artifacts": {}, "seeds": {}}
    if cfg.subjects:
        stats = stage_stats(cfg)
        manifest["stats"] = {k: v for k, v in stats.items() if k not in ("metrics_csv", "metrics_json")}
        figs = stage_report(cfg)
        arts = [out / "metrics.csv", out / "metrics.json", out / "stats.json", *figs]
        for sid in cfg.subjects:
            d = subject_dir(cfg, sid)
            arts += sorted(p for p in d.glob("*") if p.suffix in (".json", ".csv", ".bin"))
            manifest["seeds"][str(sid)] = {"train": cfg.hyper.seed + sid, "split": cfg.split_seed, "init": cfg.hyper.seed + sid}
        manifest["artifacts"] = {str(p.relative_to(out)): _digest(p) for p in arts if p.exists()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))
    return manifest
