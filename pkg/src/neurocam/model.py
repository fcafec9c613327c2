"""Conformer-style EEG classifier: temporal conv, spatial conv, attention encoder, FC head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from neurocam import tensor as T
from neurocam.tensor import RngState, Tensor

CLASSES = ("Left", "Right")


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite values produced by layer {layer!r}")
        self.layer = layer


@dataclass
class ConformerConfig:
    n_channels: int = 64
    n_times: int = 160
    n_feature_maps: int = 40
    temporal_kernel: int = 25
    pool_len: int = 75
    pool_stride: int = 15
    encoder_depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    fc_hidden: int = 32
    dropout_p: float = 0.5
    n_classes: int = 2

    @property
    def t1(self) -> int:
        return self.n_times - self.temporal_kernel + 1

    @property
    def n_tokens(self) -> int:
        return (self.t1 - self.pool_len) // self.pool_stride + 1

    @property
    def classifier_in(self) -> int:
        return self.n_tokens * self.n_feature_maps

    def validate(self) -> None:
        if self.n_times < self.temporal_kernel:
            raise ValueError("n_times must be >= temporal_kernel")
        if self.t1 < self.pool_len or self.n_tokens < 1:
            raise ValueError("pooling leaves no tokens; reduce pool_len")
        if self.n_feature_maps % self.heads:
            raise ValueError(
                f"embedding dim {self.n_feature_maps} not divisible by {self.heads} heads"
            )
        if min(self.n_channels, self.n_feature_maps, self.pool_stride, self.n_classes) < 1:
            raise ValueError("sizes must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    config: ConformerConfig
    tensors: dict[str, Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self) -> list[Tensor]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.tensors.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def save(self, path) -> dict:
        return T.save_params(path, self.arrays(), extra={"config": self.config.to_dict()})

    @classmethod
    def load(cls, path) -> "ModelParams":
        arrays, extra = T.load_params(path)
        cfg = ConformerConfig(**extra["config"])
        tensors, buffers = {}, {}
        for k, v in arrays.items():
            if k.startswith("buffer:"):
                buffers[k[len("buffer:"):]] = v
            else:
                tensors[k] = Tensor(v, requires_grad=True, name=k)
        return cls(cfg, tensors, buffers)


def _shapes(cfg: ConformerConfig) -> dict[str, tuple[tuple, int]]:
    """name -> (shape, fan_in); fan_in 0 marks constant-initialised tensors."""
    k, C = cfg.n_feature_maps, cfg.n_channels
    s = {
        "temporal.weight": ((k, 1, 1, cfg.temporal_kernel), cfg.temporal_kernel),
        "temporal.bias": ((k,), cfg.temporal_kernel),
        "spatial.weight": ((k, 1, C, 1), C),
        "spatial.bias": ((k,), C),
        "bn.gamma": ((k,), 0),
        "bn.beta": ((k,), 0),
    }
    for i in range(cfg.encoder_depth):
        p = f"enc{i}."
        s[p + "ln1.gamma"] = ((k,), 0)
        s[p + "ln1.beta"] = ((k,), 0)
        for proj in ("q", "k", "v", "o"):
            s[p + f"attn.w{proj}"] = ((k, k), k)
            s[p + f"attn.b{proj}"] = ((k,), k)
        s[p + "ln2.gamma"] = ((k,), 0)
        s[p + "ln2.beta"] = ((k,), 0)
        hid = k * cfg.mlp_ratio
        s[p + "mlp.w1"] = ((k, hid), k)
        s[p + "mlp.b1"] = ((hid,), k)
        s[p + "mlp.w2"] = ((hid, k), hid)
        s[p + "mlp.b2"] = ((k,), hid)
    s["fc1.weight"] = ((cfg.classifier_in, cfg.fc_hidden), cfg.classifier_in)
    s["fc1.bias"] = ((cfg.fc_hidden,), cfg.classifier_in)
    s["fc2.weight"] = ((cfg.fc_hidden, cfg.n_classes), cfg.fc_hidden)
    s["fc2.bias"] = ((cfg.n_classes,), cfg.fc_hidden)
    return s


def build(config: ConformerConfig, seed: RngState | int) -> ModelParams:
    """Initialise parameters with fan-in scaled uniform draws (variance 1/fan_in)."""
    config.validate()
    rng = (seed if isinstance(seed, RngState) else RngState(int(seed))).generator()
    tensors = {}
    for name, (shape, fan_in) in _shapes(config).items():
        if fan_in == 0:
            fill = 1.0 if name.endswith("gamma") else 0.0
            arr = np.full(shape, fill)
        else:
            bound = np.sqrt(3.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(arr, requires_grad=True, name=name)
    k = config.n_feature_maps
    buffers = {"bn.running_mean": np.zeros(k), "bn.running_var": np.ones(k)}
    return ModelParams(config, tensors, buffers)


class ActivationCache(dict):
    """Named intermediate tensors from one forward pass.

    After ``backward`` each entry's ``.grad`` holds the gradient reaching it,
    which is how Grad-CAM reads activations and their gradients. Dropout masks
    drawn during the pass are kept in ``masks`` for replay.
    """

    def __init__(self):
        super().__init__()
        self.masks: list[np.ndarray | None] = []


def _check(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(layer)
    return t


def forward(
    params: ModelParams,
    x,
    mode: str = "eval",
    rng: RngState | None = None,
    masks: list | None = None,
    input_requires_grad: bool = False,
):
    """Run the network on a batch ``x`` of shape (N, 1, n_channels, n_times).

    Returns ``(logits, cache)``. ``cache["input"]`` and ``cache["temporal_conv"]``
    (the electrode-resolved feature maps A^k, shape (N, k, n_channels, T1)) are
    always present. In train mode dropout draws from ``rng`` unless ``masks``
    from an earlier cache are supplied for replay.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    p = params.tensors
    training = mode == "train"
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64), requires_grad=input_requires_grad)
    if xt.ndim != 4 or xt.shape[1:] != (1, cfg.n_channels, cfg.n_times):
        raise ValueError(
            f"batch shape {xt.shape} does not match (N, 1, {cfg.n_channels}, {cfg.n_times})"
        )
    N = xt.shape[0]
    k = cfg.n_feature_maps
    cache = ActivationCache()
    cache["input"] = xt
    replay = iter(masks) if masks is not None else None

    def drop(t):
        m = next(replay) if replay is not None else None
        out, used = T.dropout(t, cfg.dropout_p, training, rng=rng, mask=m)
        cache.masks.append(used)
        return out

    a = T.conv2d_valid(xt, p["temporal.weight"], bias=p["temporal.bias"])
    cache["temporal_conv"] = _check(a, "temporal_conv")
    s = T.conv2d_valid(a, p["spatial.weight"], groups=k, bias=p["spatial.bias"])
    cache["spatial_conv"] = _check(s, "spatial_conv")
    h = T.batch_norm(
        s, p["bn.gamma"], p["bn.beta"],
        params.buffers["bn.running_mean"], params.buffers["bn.running_var"], training,
    )
    h = T.elu(h)
    h = T.avg_pool2d(h, (1, cfg.pool_len), (1, cfg.pool_stride))
    h = drop(h)
    tokens = T.transpose(T.reshape(h, (N, k, cfg.n_tokens)), (0, 2, 1))
    cache["tokens"] = _check(tokens, "pool")

    for i in range(cfg.encoder_depth):
        pre = f"enc{i}."
        z = T.layer_norm(tokens, p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
        z = T.multihead_attention(z, cfg.heads, p, prefix=pre + "attn.")
        tokens = tokens + drop(z)
        z = T.layer_norm(tokens, p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
        z = T.gelu(T.linear(z, p[pre + "mlp.w1"], p[pre + "mlp.b1"]))
        z = T.linear(z, p[pre + "mlp.w2"], p[pre + "mlp.b2"])
        tokens = tokens + drop(z)
        cache[f"encoder{i}"] = _check(tokens, f"encoder{i}")

    flat = T.reshape(tokens, (N, cfg.classifier_in))
    h = T.elu(T.linear(flat, p["fc1.weight"], p["fc1.bias"]))
    h = drop(h)
    logits = T.linear(h, p["fc2.weight"], p["fc2.bias"])
    cache["logits"] = _check(logits, "classifier")
    return logits, cache


def predict(params: ModelParams, data, batch_size: int = 64):
    """Eval-mode labels and class scores.

    ``data`` is an EpochSet or an (N, C, T) / (N, 1, C, T) array. The score
    for class c is the pre-softmax logit; argmax ties go to the lower class
    index (``np.argmax`` semantics), so equal logits predict ``Left``.
    """
    arr = getattr(data, "data", data)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, None]
    scores = []
    for start in range(0, arr.shape[0], batch_size):
        logits, _ = forward(params, arr[start : start + batch_size], mode="eval")
        scores.append(logits.data)
    scores = np.concatenate(scores) if scores else np.zeros((0, params.config.n_classes))
    labels = np.argmax(scores, axis=1) if len(scores) else np.zeros(0, dtype=int)
    return labels, scores


def label_of(scores) -> str:
    """Class name for one row of logits."""
    return CLASSES[int(np.argmax(np.asarray(scores)))]
