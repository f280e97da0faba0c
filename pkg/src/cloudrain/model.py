"""A small PointNet-style per-point segmentation network.

Shared per-point encoder -> coordinate-wise max over points -> per-point
head fed with ``[point feature | pooled feature]``. Every layer is either a
conventional or a quadratic layer. If the first layer is strict quadratic,
the whole network sees the input only through squared coordinates.
Combined with ``canonicalize=True`` this makes predictions invariant to
reflections across arbitrary planes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .canonical import canonicalize as _canonicalize
from .cloud import PointCloud
from .errors import InvalidInputError, TrainingError, UsageError
from .linalg import random_unit_vector
from .neurons import init_conventional, init_quadratic

KINDS = ("conventional", "quadratic", "quadratic-strict")
CHECKPOINT_FORMAT = "cloudrain-checkpoint"
CHECKPOINT_VERSION = 1


def expand_kinds(kinds, n_layers: int) -> list[str]:
    """Per-layer neuron kinds from a shorthand or an explicit list.

    ``"quadratic-strict"`` means a strict first layer and plain quadratic
    layers after it; ``"quadratic"`` and ``"conventional"`` apply to every layer.
    """
    if isinstance(kinds, str):
        if kinds not in KINDS:
            raise InvalidInputError(f"unknown neuron kind {kinds!r}")
        if kinds == "quadratic-strict":
            return ["quadratic-strict"] + ["quadratic"] * (n_layers - 1)
        return [kinds] * n_layers
    kinds = list(kinds)
    if len(kinds) != n_layers:
        raise InvalidInputError(f"expected {n_layers} neuron kinds, got {len(kinds)}")
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise InvalidInputError(f"unknown neuron kinds {bad}")
    return kinds


def _make_layer(kind, fan_in, fan_out, seed, activation):
    if kind == "conventional":
        return init_conventional(fan_in, fan_out, seed, activation)
    return init_quadratic(fan_in, fan_out, seed, strict=(kind == "quadratic-strict"),
                          activation=activation)


class SegModel:
    """Per-point classifier over clouds of shape (N, in_dim)."""

    def __init__(self, num_classes: int = 5, encoder=(32, 64, 128), head=(64,),
                 kinds="quadratic-strict", canonicalize: bool = False, in_dim: int = 3,
                 seed: int = 0):
        if num_classes < 2:
            raise InvalidInputError("need at least two classes")
        if not encoder:
            raise InvalidInputError("encoder needs at least one layer")
        self.num_classes = int(num_classes)
        self.encoder_widths = tuple(int(w) for w in encoder)
        self.head_widths = tuple(int(w) for w in head)
        self.in_dim = int(in_dim)
        self.canonicalize = bool(canonicalize)
        n_layers = len(self.encoder_widths) + len(self.head_widths) + 1
        self.kinds = expand_kinds(kinds, n_layers)
        ss = np.random.SeedSequence(seed)
        seeds = ss.generate_state(n_layers)

        widths = (self.in_dim,) + self.encoder_widths
        self.encoder = []
        for i in range(len(self.encoder_widths)):
            self.encoder.append(_make_layer(self.kinds[i], widths[i], widths[i + 1], seeds[i], "relu"))
        head_in = 2 * self.encoder_widths[-1]
        widths = (head_in,) + self.head_widths + (self.num_classes,)
        self.head = []
        offset = len(self.encoder_widths)
        for i in range(len(widths) - 1):
            act = "identity" if i == len(widths) - 2 else "relu"
            self.head.append(_make_layer(self.kinds[offset + i], widths[i], widths[i + 1],
                                         seeds[offset + i], act))
        self._pool_cache = None

    # -- parameters -------------------------------------------------------

    @property
    def layers(self):
        return self.encoder + self.head

    def named_layers(self):
        for i, layer in enumerate(self.encoder):
            yield f"encoder.{i}", layer
        for i, layer in enumerate(self.head):
            yield f"head.{i}", layer

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr for ln, layer in self.named_layers()
                for pn, arr in layer.params().items()}

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def architecture(self) -> dict:
        return dict(num_classes=self.num_classes, encoder=list(self.encoder_widths),
                    head=list(self.head_widths), kinds=list(self.kinds),
                    canonicalize=self.canonicalize, in_dim=self.in_dim)

    @property
    def is_reflection_invariant(self) -> bool:
        """Strict first layer: invariant to axis flips, and to any reflection with canonicalization."""
        return self.kinds[0] == "quadratic-strict"

    # -- forward / backward ---------------------------------------------

    def prepare(self, cloud) -> np.ndarray:
        """Network input for one cloud: (canonical) positions followed by features."""
        if isinstance(cloud, PointCloud):
            pos, feats = cloud.positions, cloud.features
        else:
            arr = np.asarray(cloud, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] < 3:
                raise InvalidInputError(f"expected an N x {self.in_dim} array, got {arr.shape}")
            pos, feats = arr[:, :3], arr[:, 3:]
        if 3 + feats.shape[1] != self.in_dim:
            raise InvalidInputError(f"cloud width {3 + feats.shape[1]} != model input width {self.in_dim}")
        if self.canonicalize:
            pos = _canonicalize(pos).positions
        return np.hstack([pos, feats]) if feats.shape[1] else pos

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Logits for prepared inputs of shape (B, N, in_dim); caches for backward."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise InvalidInputError(f"expected (B, N, {self.in_dim}) input, got {x.shape}")
        B, N, _ = x.shape
        h = x.reshape(B * N, self.in_dim)
        for layer in self.encoder:
            h = layer.forward(h)
        feat = h.reshape(B, N, -1)
        arg = np.argmax(feat, axis=1)  # (B, F)
        pooled = np.take_along_axis(feat, arg[:, None, :], axis=1)[:, 0, :]
        h = np.concatenate([feat, np.broadcast_to(pooled[:, None, :], feat.shape)], axis=2)
        h = h.reshape(B * N, -1)
        for layer in self.head:
            h = layer.forward(h)
        self._pool_cache = (B, N, feat.shape[2], arg)
        return h.reshape(B, N, self.num_classes)

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(logits) of shape (B, N, C)."""
        if self._pool_cache is None:
            raise UsageError("backward called before forward_batch")
        B, N, F, arg = self._pool_cache
        grads = {}
        g = np.asarray(dlogits, dtype=np.float64).reshape(B * N, self.num_classes)
        for i in reversed(range(len(self.head))):
            bundle = self.head[i].backward(g)
            for pn, arr in bundle.params.items():
                grads[f"head.{i}.{pn}"] = arr
            g = bundle.input
        g = g.reshape(B, N, 2 * F)
        dfeat = g[:, :, :F].copy()
        dpooled = g[:, :, F:].sum(axis=1)  # (B, F)
        b_idx = np.arange(B)[:, None]
        f_idx = np.arange(F)[None, :]
        np.add.at(dfeat, (b_idx, arg, f_idx), dpooled)
        g = dfeat.reshape(B * N, F)
        for i in reversed(range(len(self.encoder))):
            bundle = self.encoder[i].backward(g)
            for pn, arr in bundle.params.items():
                grads[f"encoder.{i}.{pn}"] = arr
            g = bundle.input
        return grads

    def logits(self, cloud) -> np.ndarray:
        """(N, num_classes) logits for one cloud."""
        return self.forward_batch(self.prepare(cloud)[None])[0]

    def predict_labels(self, cloud) -> np.ndarray:
        return np.argmax(self.logits(cloud), axis=1)


def forward(model: SegModel, cloud) -> np.ndarray:
    return model.logits(cloud)


def predict_labels(model: SegModel, cloud) -> np.ndarray:
    return model.predict_labels(cloud)


def predict_many(model: SegModel, clouds) -> list[np.ndarray]:
    """Logits for a list of clouds, batching clouds of equal size."""
    out = [None] * len(clouds)
    by_size = {}
    for i, c in enumerate(clouds):
        by_size.setdefault(len(c), []).append(i)
    for idx in by_size.values():
        for start in range(0, len(idx), 16):
            chunk = idx[start:start + 16]
            x = np.stack([model.prepare(clouds[i]) for i in chunk])
            logits = model.forward_batch(x)
            for j, i in enumerate(chunk):
                out[i] = logits[j]
    return out


# --------------------------------------------------------------------------
# loss and optimisation


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over all points and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    C = logits.shape[-1]
    flat = logits.reshape(-1, C)
    lab = labels.reshape(-1)
    if lab.shape[0] != flat.shape[0]:
        raise InvalidInputError("one label per logit row required")
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    n = flat.shape[0]
    loss = float(np.mean(lse - shifted[np.arange(n), lab]))
    grad = np.exp(shifted - lse[:, None])
    grad[np.arange(n), lab] -= 1.0
    return loss, (grad / n).reshape(logits.shape)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-2):
        self.params, self.lr = params, lr

    def step(self, grads):
        for k, p in self.params.items():
            p -= self.lr * grads[k]


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 3e-3
    optimizer: str = "adam"
    seed: int = 0
    aug_scale: bool = True
    aug_jitter: bool = True
    aug_reflect: bool = False
    scale_range: tuple[float, float] = (0.9, 1.1)
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    reflect_prob: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidInputError("epochs, batch size and learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")


def _augmented(cloud: PointCloud, cfg: TrainConfig, rng) -> PointCloud:
    from .data import augment, reflect

    if cfg.aug_reflect and rng.random() < cfg.reflect_prob:
        cloud = reflect(cloud, random_unit_vector(rng))
    if cfg.aug_scale or cfg.aug_jitter:
        cloud = augment(cloud, cfg.scale_range if cfg.aug_scale else None,
                        cfg.jitter_sigma if cfg.aug_jitter else 0.0, cfg.jitter_clip,
                        seed=int(rng.integers(2**63)))
    return cloud


def train(model: SegModel, dataset, cfg: TrainConfig | None = None, log=None) -> list[dict]:
    """Fit ``model`` in place on labelled clouds; returns per-epoch history.

    History rows hold the epoch's mean loss and the mAcc / mIOU of the
    predictions made on the (augmented) training batches. Runs are
    reproducible for a fixed ``cfg.seed``.
    """
    from .evaluation import confusion, macc, miou

    cfg = cfg or TrainConfig()
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("empty training set")
    if any(c.labels is None for c in dataset):
        raise InvalidInputError("training clouds need labels")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.lr) if cfg.optimizer == "adam" else SGD(params, cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        losses, weights = [], []
        cm = np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
        for start in range(0, len(order), cfg.batch_size):
            batch = [_augmented(dataset[i], cfg, rng) for i in order[start:start + cfg.batch_size]]
            groups = {}
            for c in batch:
                groups.setdefault(len(c), []).append(c)
            for clouds in groups.values():
                x = np.stack([model.prepare(c) for c in clouds])
                y = np.stack([c.labels for c in clouds])
                logits = model.forward_batch(x)
                loss, dlogits = cross_entropy(logits, y)
                if not np.isfinite(loss):
                    raise TrainingError(epoch)
                grads = model.backward(dlogits)
                opt.step(grads)
                losses.append(loss)
                weights.append(y.size)
                cm += confusion(np.argmax(logits, axis=2).reshape(-1), y.reshape(-1), model.num_classes)
        row = dict(epoch=epoch + 1, loss=float(np.average(losses, weights=weights)),
                   macc=macc(cm), miou=miou(cm))
        history.append(row)
        if log is not None:
            log(row)
    return history


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: SegModel, path) -> None:
    """Write an ``.npz`` container; layout documented in the README."""
    arrays = {
        "__format__": np.array(CHECKPOINT_FORMAT),
        "__version__": np.array(CHECKPOINT_VERSION),
        "__architecture__": np.array(json.dumps(model.architecture(), sort_keys=True)),
    }
    arrays.update(model.parameters())
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> SegModel:
    with np.load(path, allow_pickle=False) as z:
        if str(z["__format__"]) != CHECKPOINT_FORMAT:
            raise InvalidInputError(f"{path} is not a checkpoint")
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {version}")
        arch = json.loads(str(z["__architecture__"]))
        model = SegModel(**arch)
        for name, arr in model.parameters().items():
            if name not in z or z[name].shape != arr.shape:
                raise InvalidInputError(f"checkpoint tensor {name} missing or mis-shaped")
            arr[...] = z[name]
    for name, layer in model.named_layers():
        if getattr(layer, "strict_invariant", False) and (np.any(layer.W1) or np.any(layer.W2)):
            raise InvalidInputError(f"checkpoint layer {name} is strict but has linear weights")
    return model


__all__ = [
    "SegModel", "TrainConfig", "train", "forward", "predict_labels", "predict_many",
    "cross_entropy", "save_checkpoint", "load_checkpoint", "expand_kinds", "Adam", "SGD",
]
