"""Per-subject training: trial-grouped splits, Adam on cross-entropy, Table-I style metrics."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from neurocam import tensor as T
from neurocam.dsp import EpochSet
from neurocam.model import ModelParams, NonFiniteError, forward, predict
from neurocam.tensor import RngState

log = logging.getLogger(__name__)


@dataclass
class Hyperparams:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 150
    seed: int = 0
    weight_decay: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SubjectMetrics:
    """Accuracies in percent; counts are None for rows copied from the paper."""

    subject_id: int
    overall_acc: float
    left_acc: float
    right_acc: float
    chance_level: float
    n_test: int | None = None
    n_test_left: int | None = None
    n_test_right: int | None = None


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; carries the last parameters that gave a finite loss."""

    def __init__(self, epoch: int, last_good: ModelParams, history: History):
        super().__init__(f"non-finite loss in epoch {epoch}")
        self.epoch = epoch
        self.last_good = last_good
        self.history = history


def split_dataset(epochs: EpochSet, test_fraction: float = 0.25, seed: int = 0) -> tuple[EpochSet, EpochSet]:
    """Class-stratified split that keeps every trial's windows on one side.

    Within each class, whole trials are shuffled and the first
    ``round(test_fraction * n_trials)`` go to the test set.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    keys = epochs.trial_keys()
    rng = RngState(seed).generator()
    test_mask = np.zeros(len(epochs), dtype=bool)
    for c in (0, 1):
        groups = np.unique(keys[epochs.labels == c])
        if len(groups) == 0:
            raise ValueError(f"class {c} absent from input; cannot stratify")
        n_test = int(round(test_fraction * len(groups)))
        if n_test == 0 or n_test == len(groups):
            raise ValueError(
                f"class {c} has {len(groups)} trial(s); cannot place a {test_fraction:g} fraction in the test set"
            )
        chosen = rng.permutation(groups)[:n_test]
        test_mask |= np.isin(keys, chosen)
    idx = np.arange(len(epochs))
    return epochs.take(idx[~test_mask]), epochs.take(idx[test_mask])


def train(params: ModelParams, data: EpochSet, hp: Hyperparams, callback=None) -> tuple[ModelParams, History]:
    """Adam on mean cross-entropy for a fixed number of epochs (no early stopping).

    Returns a trained copy of ``params`` and the per-epoch loss / train-mode
    accuracy history. Fully deterministic given ``hp.seed``. ``callback(epoch,
    params, history)`` runs after every epoch (e.g. for validation logging).
    """
    n = len(data)
    if hp.batch_size > n:
        raise ValueError(f"batch_size {hp.batch_size} exceeds training set size {n}")
    if data.n_channels != params.config.n_channels or data.n_times != params.config.n_times:
        raise ValueError("epoch shape does not match model config")
    params = params.copy()
    plist = params.trainable()
    m = [np.zeros_like(p.data) for p in plist]
    v = [np.zeros_like(p.data) for p in plist]
    rng = RngState(hp.seed)
    shuffler = rng.generator()
    x_all = data.data[:, None]
    y_all = data.labels
    hist = History()
    step = 0
    last_good = params.copy()
    for epoch in range(hp.epochs):
        order = shuffler.permutation(n)
        losses, correct = [], 0
        for start in range(0, n, hp.batch_size):
            b = order[start : start + hp.batch_size]
            try:
                logits, _ = forward(params, x_all[b], mode="train", rng=rng)
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch, last_good, hist) from exc
            loss = T.cross_entropy(logits, y_all[b])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, last_good, hist)
            T.zero_grad(plist)
            T.backward(loss)
            step += 1
            lr_t = hp.learning_rate * np.sqrt(1 - hp.beta2**step) / (1 - hp.beta1**step)
            for i, p in enumerate(plist):
                g = p.grad
                m[i] = hp.beta1 * m[i] + (1 - hp.beta1) * g
                v[i] = hp.beta2 * v[i] + (1 - hp.beta2) * g * g
                upd = lr_t * m[i] / (np.sqrt(v[i]) + 1e-8)
                if hp.weight_decay:
                    upd = upd + hp.learning_rate * hp.weight_decay * p.data
                p.data = p.data - upd
            losses.append(float(loss.data) * len(b))
            correct += int((np.argmax(logits.data, axis=1) == y_all[b]).sum())
        T.zero_grad(plist)
        hist.loss.append(sum(losses) / n)
        hist.train_acc.append(100.0 * correct / n)
        last_good = params.copy()
        if callback is not None:
            callback(epoch, params, hist)
        log.debug("epoch %d loss %.4f acc %.1f", epoch, hist.loss[-1], hist.train_acc[-1])
    return params, hist


def metrics_from_predictions(subject_id: int, y_true, y_pred, chance: float) -> SubjectMetrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty test set")
    left = y_true == 0
    right = y_true == 1
    nl, nr = int(left.sum()), int(right.sum())
    cl = int((y_pred[left] == 0).sum())
    cr = int((y_pred[right] == 1).sum())
    return SubjectMetrics(
        subject_id=int(subject_id),
        overall_acc=100.0 * (cl + cr) / len(y_true),
        left_acc=100.0 * cl / nl if nl else float("nan"),
        right_acc=100.0 * cr / nr if nr else float("nan"),
        chance_level=float(chance),
        n_test=len(y_true),
        n_test_left=nl,
        n_test_right=nr,
    )


def evaluate(params: ModelParams, test: EpochSet, chance: float) -> SubjectMetrics:
    """Window-level accuracies as exact count ratios times 100."""
    if len(test) == 0:
        raise ValueError("empty test set")
    pred, _ = predict(params, test)
    sid = int(test.provenance[0, 0])
    return metrics_from_predictions(sid, test.labels, pred, chance)
