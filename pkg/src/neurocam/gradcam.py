"""Grad-CAM, guided backpropagation and channel / temporal relevance.

A "model" here is either :class:`~neurocam.model.ModelParams` (evaluated in
eval mode) or any callable ``f(x: Tensor) -> (logits, cache)`` whose cache maps
hook names to intermediate tensors. The second form is how small oracle
networks are plugged in for testing.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from neurocam import tensor as T
from neurocam.model import CLASSES, ModelParams, forward
from neurocam.tensor import Tensor

DEFAULT_LAYER = "temporal_conv"


@dataclass
class RelevanceMap:
    """Class-discriminative relevance for one epoch.

    ``coarse`` is ReLU(sum_k w_k A^k) at the hooked layer, ``fine`` the same
    map bilinearly resized to the input epoch. ``guided`` is filled in only
    when guided backpropagation was run.
    """

    class_label: str
    coarse: np.ndarray
    fine: np.ndarray
    weights: np.ndarray
    Z: int
    provenance: tuple = ()
    guided: np.ndarray | None = field(default=None, repr=False)
    true_label: str | None = None
    predicted_label: str | None = None

    @property
    def correct(self) -> bool:
        return self.true_label is not None and self.true_label == self.predicted_label

    def guided_gradcam(self) -> np.ndarray:
        if self.guided is None:
            raise ValueError("no guided map stored on this RelevanceMap")
        return guided_gradcam(self.fine, self.guided)

    def to_dict(self) -> dict:
        d = {
            "class_label": self.class_label,
            "weights": self.weights.tolist(),
            "Z": self.Z,
            "provenance": list(self.provenance),
            "true_label": self.true_label,
            "predicted_label": self.predicted_label,
            "coarse": self.coarse.tolist(),
            "fine": self.fine.tolist(),
        }
        if self.guided is not None:
            d["guided"] = self.guided.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RelevanceMap":
        return cls(
            d["class_label"], np.asarray(d["coarse"], float), np.asarray(d["fine"], float),
            np.asarray(d["weights"], float), int(d["Z"]), tuple(d["provenance"]),
            np.asarray(d["guided"], float) if "guided" in d else None,
            d.get("true_label"), d.get("predicted_label"),
        )


@dataclass
class ChannelRanking:
    class_label: str
    scores: dict[str, float]
    order: list[str]

    def top(self, k: int) -> list[str]:
        return self.order[:k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["channel", "score", "rank", "class"])
        for r, ch in enumerate(self.order, start=1):
            w.writerow([ch, repr(float(self.scores[ch])), r, self.class_label])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ChannelRanking":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty ranking")
        rows.sort(key=lambda r: int(r["rank"]))
        return cls(rows[0]["class"], {r["channel"]: float(r["score"]) for r in rows}, [r["channel"] for r in rows])


def rank_channels(class_label: str, scores: dict[str, float], montage_order: Sequence[str]) -> ChannelRanking:
    """Sort descending by score; equal scores keep ``montage_order``."""
    pos = {ch: i for i, ch in enumerate(montage_order)}
    missing = set(scores) - set(pos)
    if missing:
        raise ValueError(f"channels not in montage order: {sorted(missing)}")
    order = sorted(scores, key=lambda ch: (-scores[ch], pos[ch]))
    return ChannelRanking(class_label, dict(scores), order)


# --------------------------------------------------------------------------
# core passes


def _as_fn(model) -> Callable:
    if isinstance(model, ModelParams):
        return lambda xt: forward(model, xt, mode="eval")
    if callable(model):
        return model
    raise TypeError("model must be ModelParams or a callable returning (logits, cache)")


def _batch(x, model) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if isinstance(model, ModelParams):
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[:, None]
    return x


def _class_index(c, n_classes: int) -> int:
    if isinstance(c, str):
        if c not in CLASSES:
            raise ValueError(f"unknown class label {c!r}")
        c = CLASSES.index(c)
    c = int(c)
    if not 0 <= c < n_classes:
        raise IndexError(f"class index {c} out of range for {n_classes} classes")
    return c


def _select_logits(logits: Tensor, classes) -> Tensor:
    """Sum over the batch of each row's target logit; rows stay independent in eval mode."""
    onehot = np.zeros(logits.shape)
    onehot[np.arange(logits.shape[0]), classes] = 1.0
    return T.sum_(T.mul(logits, Tensor(onehot)))


def grad_cam_batch(model, x, classes, layer: str = DEFAULT_LAYER, reduction: str = "sum"):
    """Grad-CAM for a batch. Returns ``(weights (N,k), coarse (N,h,w), logits (N,n_cls))``.

    ``reduction="sum"`` gives w_k = sum_ij dY^c/dA^k_ij, which equals the
    classifier weight when Y^c is a linear read-out of globally averaged
    feature maps. ``"mean"`` divides by Z = h*w; the two differ by a positive
    constant, so maps and channel rankings are rescaled, never reordered.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError("reduction must be 'sum' or 'mean'")
    fn = _as_fn(model)
    xt = Tensor(_batch(x, model))
    logits, cache = fn(xt)
    if layer not in cache:
        raise KeyError(f"layer hook {layer!r} not registered; available: {sorted(cache)}")
    classes = np.broadcast_to(np.asarray(classes), (logits.shape[0],))
    classes = np.array([_class_index(c, logits.shape[1]) for c in classes])
    A = cache[layer]
    if A.ndim != 4:
        raise ValueError(f"hooked activation must be (N, k, h, w), got {A.shape}")
    if not A.requires_grad:
        raise ValueError(f"hooked activation {layer!r} is detached; its parameters must require grad")
    graph = T.backward(_select_logits(logits, classes))
    g = A.grad if A.grad is not None else np.zeros_like(A.data)
    T.zero_grad(graph)
    w = g.sum(axis=(2, 3)) if reduction == "sum" else g.mean(axis=(2, 3))
    coarse = np.maximum(np.einsum("nk,nkhw->nhw", w, A.data), 0.0)
    return w, coarse, logits.data


def grad_cam(model, epoch, c, layer: str = DEFAULT_LAYER, provenance: tuple = (), reduction: str = "sum") -> RelevanceMap:
    """Coarse Grad-CAM map for one epoch and class ``c`` (index or label).

    w_k = sum (or mean) over the map's (electrode, time) positions of
    dY^c/dA^k, and coarse = ReLU(sum_k w_k A^k). The fine map is the coarse
    one resized to the epoch's (channels, samples) grid.
    """
    x = _batch(epoch, model)
    w, coarse, logits = grad_cam_batch(model, x, [c], layer, reduction)
    target = x.shape[-2:]
    cls = CLASSES[_class_index(c, logits.shape[1])] if logits.shape[1] == len(CLASSES) else str(c)
    return RelevanceMap(
        class_label=cls,
        coarse=coarse[0],
        fine=upsample_bilinear(coarse[0], target),
        weights=w[0],
        Z=int(coarse.shape[1] * coarse.shape[2]),
        provenance=tuple(provenance),
        predicted_label=CLASSES[int(np.argmax(logits[0]))] if logits.shape[1] == len(CLASSES) else None,
    )


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear interpolation matrix with aligned corners."""
    M = np.zeros((n_out, n_in))
    if n_in == 1:
        M[:, 0] = 1.0
        return M
    pos = np.arange(n_out) * (n_in - 1) / max(n_out - 1, 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    M[np.arange(n_out), lo] = 1.0 - frac
    M[np.arange(n_out), lo + 1] += frac
    return M


def upsample_bilinear(coarse, target) -> np.ndarray:
    """Separable bilinear resize with corner alignment; works on (..., h, w) stacks."""
    coarse = np.asarray(coarse, dtype=np.float64)
    h, w = coarse.shape[-2:]
    H, W = target
    if H < h or W < w:
        raise ValueError(f"target {tuple(target)} smaller than source {(h, w)}")
    Mh = np.eye(h) if H == h else _axis_weights(h, H)
    Mw = np.eye(w) if W == w else _axis_weights(w, W)
    return Mh @ coarse @ Mw.T


def guided_backprop_batch(model, x, classes) -> np.ndarray:
    """Guided input gradients dY^c/dx for a batch, shape equal to ``x``."""
    fn = _as_fn(model)
    xt = Tensor(_batch(x, model), requires_grad=True)
    with T.guided_backprop_mode():
        logits, _ = fn(xt)
        classes = np.broadcast_to(np.asarray(classes), (logits.shape[0],))
        classes = np.array([_class_index(c, logits.shape[1]) for c in classes])
        graph = T.backward(_select_logits(logits, classes))
    g = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    T.zero_grad(graph)
    return g


def input_gradient_batch(model, x, classes) -> np.ndarray:
    """Plain (ungated) input gradient, for comparison with the guided map."""
    fn = _as_fn(model)
    xt = Tensor(_batch(x, model), requires_grad=True)
    logits, _ = fn(xt)
    classes = np.broadcast_to(np.asarray(classes), (logits.shape[0],))
    classes = np.array([_class_index(c, logits.shape[1]) for c in classes])
    graph = T.backward(_select_logits(logits, classes))
    g = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    T.zero_grad(graph)
    return g


def guided_backprop(model, epoch, c) -> np.ndarray:
    """Guided backpropagation map (n_channels, n_times) for one epoch."""
    g = guided_backprop_batch(model, _batch(epoch, model), [c])
    return g.reshape(g.shape[-2:]) if g.shape[0] == 1 else g


def guided_gradcam(fine, guided) -> np.ndarray:
    fine = np.asarray(fine, dtype=np.float64)
    guided = np.asarray(guided, dtype=np.float64)
    if fine.shape != guided.shape:
        raise ValueError(f"shape mismatch: fine {fine.shape} vs guided {guided.shape}")
    return fine * guided


def explain_epochs(
    params: ModelParams,
    epochs,
    target: str = "true",
    layer: str = DEFAULT_LAYER,
    with_guided: bool = False,
    batch_size: int = 64,
    reduction: str = "sum",
) -> list[RelevanceMap]:
    """Grad-CAM maps for every epoch of an EpochSet.

    ``target="true"`` explains each epoch's own class, ``"predicted"`` the
    model's prediction. Predictions are recorded so that relevance can later
    be restricted to correctly classified epochs.
    """
    if target not in ("true", "predicted"):
        raise ValueError("target must be 'true' or 'predicted'")
    out: list[RelevanceMap] = []
    shape = (epochs.n_channels, epochs.n_times)
    for start in range(0, len(epochs), batch_size):
        sl = slice(start, start + batch_size)
        x = epochs.data[sl][:, None]
        logits, _ = forward(params, x, mode="eval")
        pred = np.argmax(logits.data, axis=1)
        cls = epochs.labels[sl] if target == "true" else pred
        w, coarse, _ = grad_cam_batch(params, x, cls, layer, reduction)
        fine = upsample_bilinear(coarse, shape)
        guided = guided_backprop_batch(params, x, cls)[:, 0] if with_guided else None
        for i in range(len(cls)):
            out.append(
                RelevanceMap(
                    class_label=CLASSES[int(cls[i])],
                    coarse=coarse[i],
                    fine=fine[i],
                    weights=w[i],
                    Z=int(coarse.shape[1] * coarse.shape[2]),
                    provenance=tuple(int(v) for v in epochs.provenance[start + i]),
                    guided=None if guided is None else guided[i],
                    true_label=CLASSES[int(epochs.labels[start + i])],
                    predicted_label=CLASSES[int(pred[i])],
                )
            )
    return out


def _map_of(m: RelevanceMap, source: str) -> np.ndarray:
    if source == "gradcam":
        return m.fine
    if source == "guided_gradcam":
        return np.abs(m.guided_gradcam())
    raise ValueError(f"unknown relevance source {source!r}")


def channel_relevance(
    maps: Sequence[RelevanceMap],
    channel_labels: Sequence[str],
    class_label: str | None = None,
    correct_only: bool = True,
    source: str = "gradcam",
    montage_order: Sequence[str] | None = None,
) -> ChannelRanking:
    """Rank channels by the mean (over epochs) of each row's time-averaged relevance.

    Only maps explaining ``class_label`` are used, and with ``correct_only``
    only those whose epoch was classified correctly. ``source="guided_gradcam"``
    scores |fine * guided| instead of the plain fine map.
    """
    if class_label is None:
        labels = {m.class_label for m in maps}
        if len(labels) != 1:
            raise ValueError(f"maps are not class homogeneous: {sorted(labels)}")
        class_label = labels.pop()
    sel = [m for m in maps if m.class_label == class_label and (m.correct or not correct_only)]
    if not sel:
        raise ValueError(f"no {'correctly classified ' if correct_only else ''}epochs for class {class_label}")
    n = len(channel_labels)
    rows = []
    for m in sel:
        fm = _map_of(m, source)
        if fm.shape[0] != n:
            raise ValueError("relevance map rows do not match channel labels")
        rows.append(fm.mean(axis=1))
    score = np.mean(rows, axis=0)
    return rank_channels(
        class_label, {ch: float(s) for ch, s in zip(channel_labels, score)}, montage_order or list(channel_labels)
    )


def temporal_relevance(fine, top_fraction: float = 0.2, fs: float = 160.0) -> list[tuple[float, float]]:
    """Time windows (start_s, end_s) where the channel-mean relevance is in the top fraction.

    Samples strictly above the (1 - top_fraction) quantile are kept (all
    samples when top_fraction is 1) and merged into maximal contiguous runs.
    A run over samples a..b spans [a/fs, (b+1)/fs).
    """
    if not 0 < top_fraction <= 1:
        raise ValueError("top_fraction must lie in (0, 1]")
    fine = np.asarray(fine, dtype=np.float64)
    prof = fine.mean(axis=0) if fine.ndim == 2 else fine
    if top_fraction >= 1:
        keep = np.ones(prof.shape, dtype=bool)
    else:
        keep = prof > np.quantile(prof, 1 - top_fraction)
    edges = np.diff(np.concatenate([[0], keep.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(a / fs, b / fs) for a, b in zip(starts, ends)]


def maps_to_json(maps: Sequence[RelevanceMap]) -> str:
    return json.dumps([m.to_dict() for m in maps])


def maps_from_json(text: str) -> list[RelevanceMap]:
    return [RelevanceMap.from_dict(d) for d in json.loads(text)]
