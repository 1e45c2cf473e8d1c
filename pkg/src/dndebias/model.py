"""Dense embedding network with hand-written backpropagation.

Every teacher and student network in the package is an :class:`EmbeddingNet`:
a stack of affine layers (relu or identity) producing an embedding ``f``,
followed by a bias-free linear identity-classification head.  All arithmetic
is float64.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateEmbeddingError, FormatError, ShapeError, TrainingAbortError

ACTIVATIONS = ("identity", "relu")
CHECKPOINT_MAGIC = b"DNDNET1\x00"


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} do not agree"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class EmbeddingNet:
    """Feed-forward embedding network plus identity-classification head.

    ``forward`` returns the output of the last layer (the embedding used for
    verification and distillation) and the head logits ``head_weight @ f``.
    """

    layers: list[Layer]
    head_weight: np.ndarray  # (num_identities, embed_dim)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        self.head_weight = np.asarray(self.head_weight, dtype=np.float64)
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise ShapeError(
                    f"layer dims do not compose: {prev.out_dim} -> {cur.in_dim}"
                )
        if self.head_weight.ndim != 2 or self.head_weight.shape[1] != self.embed_dim:
            raise ShapeError(
                f"head weight {self.head_weight.shape} does not match embed_dim {self.embed_dim}"
            )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def embed_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_identities(self) -> int:
        return self.head_weight.shape[0]

    @property
    def architecture(self) -> tuple:
        return (
            tuple((l.in_dim, l.out_dim, l.activation) for l in self.layers),
            self.num_identities,
        )

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order (shared, not copied)."""
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        params.append(self.head_weight)
        return params

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "EmbeddingNet":
        return EmbeddingNet(
            layers=[Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            head_weight=self.head_weight.copy(),
        )

    def digest(self) -> str:
        """SHA-256 over architecture and raw parameter bytes."""
        h = hashlib.sha256(repr(self.architecture).encode())
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())


@dataclass
class Gradients:
    """Per-parameter gradient arrays, same order and shapes as ``net.parameters()``."""

    arrays: list[np.ndarray]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.arrays)


@dataclass
class TrainSpec:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_osd: float = 1.0
    lr0: float = 0.1
    lr_decay_factor: float = 0.9
    lr_decay_interval_epochs: int = 50
    epochs: int = 300
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda_osd"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")
        if self.lr_decay_interval_epochs < 1:
            raise ValueError("lr_decay_interval_epochs must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def learning_rate(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay_factor ** (epoch // self.lr_decay_interval_epochs)

    def replace(self, **changes) -> "TrainSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSpec":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown TrainSpec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainSpec":
        return cls.from_dict(json.loads(text))


def init_net(
    input_dim: int,
    hidden_dims: Sequence[int],
    embed_dim: int,
    num_identities: int,
    rng: np.random.Generator | int,
) -> EmbeddingNet:
    """Build a network with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.

    Hidden layers use relu; the embedding layer is linear so embeddings are
    never clamped to zero.
    """
    rng = np.random.default_rng(rng)
    dims = [input_dim, *hidden_dims, embed_dim]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        bound = 1.0 / np.sqrt(d_in)
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(
            Layer(
                rng.uniform(-bound, bound, size=(d_out, d_in)),
                rng.uniform(-bound, bound, size=d_out),
                act,
            )
        )
    bound = 1.0 / np.sqrt(embed_dim)
    head = rng.uniform(-bound, bound, size=(num_identities, embed_dim))
    return EmbeddingNet(layers, head)


def _check_input(net: EmbeddingNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim or x.ndim not in (1, 2):
        raise ShapeError(f"input of shape {x.shape} does not match input_dim {net.input_dim}")
    return x


def _forward_cached(net: EmbeddingNet, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    for layer in net.layers:
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(h)
    logits = h @ net.head_weight.T
    return acts, pre, logits


def forward(net: EmbeddingNet, x) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(embedding, logits)`` for a single input or a batch of rows."""
    x = _check_input(net, x)
    acts, _, logits = _forward_cached(net, np.atleast_2d(x))
    f = acts[-1]
    if x.ndim == 1:
        return f[0], logits[0]
    return f, logits


def embed(net: EmbeddingNet, X) -> np.ndarray:
    return forward(net, np.atleast_2d(_check_input(net, X)))[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def class_loss(logits, label: int) -> float:
    """Softmax cross-entropy ``-log softmax(logits)[label]`` (log-sum-exp stabilised)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise IndexError(f"label {label} out of range for {logits.shape[-1]} classes")
    return float(-_log_softmax(logits)[label])


def cosine_distance_rows(fs: np.ndarray, ft: np.ndarray):
    """Row-wise ``1 - cos(fs, ft)`` and its gradient with respect to ``fs``."""
    ns = np.linalg.norm(fs, axis=1)
    nt = np.linalg.norm(ft, axis=1)
    if (ns <= 1e-12).any() or (nt <= 1e-12).any():
        raise DegenerateEmbeddingError("embedding with near-zero norm in distillation loss")
    s_hat = fs / ns[:, None]
    t_hat = ft / nt[:, None]
    cos = np.sum(s_hat * t_hat, axis=1)
    # d(1 - cos)/d fs = -(t_hat - cos * s_hat) / |fs|
    grad = -(t_hat - cos[:, None] * s_hat) / ns[:, None]
    return 1.0 - cos, grad


@dataclass
class LossParts:
    total: float
    class_loss: float
    distill_loss: float = 0.0
    lam: float = 0.0


def backward(
    net: EmbeddingNet,
    X,
    labels,
    teacher_embeddings=None,
    lam: float = 0.0,
) -> tuple[Gradients, LossParts]:
    """Mean-over-batch gradient of ``L_class + lam * L_dis``.

    Args:
        net: network being trained.
        X: batch of inputs, shape (n, input_dim).
        labels: identity labels, shape (n,).
        teacher_embeddings: frozen teacher embeddings of the same inputs,
            shape (n, embed_dim). When omitted (or ``lam == 0``) the
            distillation term is skipped entirely.
        lam: distillation weight.

    Returns:
        The gradients and the batch-mean loss components.
    """
    X = np.atleast_2d(_check_input(net, X))
    labels = np.asarray(labels)
    n = X.shape[0]
    if n == 0:
        raise ShapeError("empty batch")
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 1} labels for {n} inputs")
    if labels.min() < 0 or labels.max() >= net.num_identities:
        raise IndexError("label out of range")

    acts, pre, logits = _forward_cached(net, X)
    f = acts[-1]
    logp = _log_softmax(logits)
    lc = -logp[np.arange(n), labels]

    # d mean(L_class) / d logits
    d_logits = np.exp(logp)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    g_head = d_logits.T @ f
    d_f = d_logits @ net.head_weight

    ld = np.zeros(n)
    use_dis = teacher_embeddings is not None and lam != 0.0
    if use_dis:
        ft = np.asarray(teacher_embeddings, dtype=np.float64)
        if ft.shape != f.shape:
            raise ShapeError(f"teacher embeddings {ft.shape} vs student {f.shape}")
        ld, g_fs = cosine_distance_rows(f, ft)
        d_f = d_f + (lam / n) * g_fs

    grads: list[np.ndarray] = []
    d_h = d_f
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        d_z = d_h * (pre[i] > 0) if layer.activation == "relu" else d_h
        grads.append(d_z.sum(axis=0))
        grads.append(d_z.T @ acts[i])
        if i > 0:
            d_h = d_z @ layer.weight
    grads.reverse()  # now [W0, b0, W1, b1, ...]
    grads.append(g_head)

    lc_mean = float(lc.mean())
    ld_mean = float(ld.mean()) if use_dis else 0.0
    parts = LossParts(
        total=lc_mean + lam * ld_mean, class_loss=lc_mean, distill_loss=ld_mean, lam=lam
    )
    return Gradients(grads), parts


def batch_loss(net: EmbeddingNet, X, labels, teacher_embeddings=None, lam: float = 0.0) -> LossParts:
    """Loss components without gradients (used by finite-difference checks)."""
    X = np.atleast_2d(_check_input(net, X))
    labels = np.asarray(labels)
    f, logits = forward(net, X)
    lc = float((-_log_softmax(logits)[np.arange(len(labels)), labels]).mean())
    ld = 0.0
    if teacher_embeddings is not None and lam != 0.0:
        ld = float(cosine_distance_rows(f, np.asarray(teacher_embeddings, dtype=np.float64))[0].mean())
    return LossParts(total=lc + lam * ld, class_loss=lc, distill_loss=ld, lam=lam)


def sgd_step(net: EmbeddingNet, grads: Gradients, lr: float) -> EmbeddingNet:
    """Plain SGD ``p <- p - lr * g`` in place; returns ``net`` for chaining."""
    params = net.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeError("gradient shapes do not match network parameters")
    if not grads.is_finite():
        raise TrainingAbortError("non-finite gradient entry; aborting training")
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    for p, g in zip(params, grads):
        p -= lr * g
    return net


# --- checkpoint I/O -----------------------------------------------------------


def save_checkpoint(net: EmbeddingNet, path) -> None:
    """Write the DNDNET1 binary checkpoint (little-endian float64 parameters)."""
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<I", len(net.layers))
    for layer in net.layers:
        out += struct.pack("<IIB", layer.in_dim, layer.out_dim, ACTIVATIONS.index(layer.activation))
    out += struct.pack("<II", net.embed_dim, net.num_identities)
    for p in net.parameters():
        out += np.ascontiguousarray(p, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> EmbeddingNet:
    data = Path(path).read_bytes()
    return checkpoint_from_bytes(data)


def checkpoint_from_bytes(data: bytes) -> EmbeddingNet:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (n_layers,) = struct.unpack("<I", take(4, "layer count"))
    dims = []
    for _ in range(n_layers):
        d_in, d_out, act = struct.unpack("<IIB", take(9, "layer dims"))
        if act >= len(ACTIVATIONS):
            raise FormatError(f"unknown activation code {act}", pos - 1)
        dims.append((d_in, d_out, ACTIVATIONS[act]))
    embed_dim, num_ids = struct.unpack("<II", take(8, "head dims"))

    def array(shape, what):
        count = int(np.prod(shape))
        return np.frombuffer(take(8 * count, what), dtype="<f8").astype(np.float64).reshape(shape)

    layers = []
    for i, (d_in, d_out, act) in enumerate(dims):
        w = array((d_out, d_in), f"layer {i} weight")
        b = array((d_out,), f"layer {i} bias")
        layers.append(Layer(w, b, act))
    head = array((num_ids, embed_dim), "head weight")
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint", pos)
    try:
        return EmbeddingNet(layers, head)
    except ShapeError as exc:
        raise FormatError(f"inconsistent checkpoint header: {exc}", 0) from exc
