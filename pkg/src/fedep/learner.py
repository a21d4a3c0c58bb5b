"""Local training: a two-hidden-layer MLP trained with minibatch SGD.

The model is a fixed-shape fully connected network (features -> 256 -> 128
-> classes, ReLU activations, softmax output) whose parameters live in one
flat float64 vector, which is what the aggregators average. Training
optionally adds a proximal pull toward an anchor model, which turns plain
local SGD into the proximal variant used by the fedprox aggregator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, TrainingError
from .numkit import Rng, ensure_matrix

DEFAULT_HIDDEN = (256, 128)


def mlp_dims(n_features: int, n_classes: int, hidden=DEFAULT_HIDDEN) -> tuple[int, ...]:
    return (n_features, *hidden, n_classes)


@dataclass
class ModelWeights:
    """Flat parameter vector plus the layer-shape descriptor that indexes it."""

    layer_dims: tuple[int, ...]
    flat: np.ndarray

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output layer")
        if self.flat.shape != (param_count(self.layer_dims),):
            raise ConsistencyError(
                f"flat vector has {self.flat.size} entries, shape descriptor "
                f"{self.layer_dims} needs {param_count(self.layer_dims)}"
            )
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("model weights must be finite")

    @classmethod
    def zeros(cls, layer_dims) -> "ModelWeights":
        return cls(tuple(layer_dims), np.zeros(param_count(layer_dims)))

    @classmethod
    def init_glorot(cls, layer_dims, rng: Rng) -> "ModelWeights":
        """Uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases."""
        w = cls.zeros(layer_dims)
        for mat, bias in w.layers():
            fan_in, fan_out = mat.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            mat[:] = (rng.uniform(mat.shape) * 2.0 - 1.0) * limit
            bias[:] = 0.0
        return w

    def layers(self):
        """Yield (weight_matrix, bias) views into the flat vector, per layer."""
        offset = 0
        for din, dout in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            mat = self.flat[offset : offset + din * dout].reshape(din, dout)
            offset += din * dout
            bias = self.flat[offset : offset + dout]
            offset += dout
            yield mat, bias

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.layer_dims, self.flat.copy())

    @property
    def n_params(self) -> int:
        return self.flat.size

    def to_bytes(self) -> bytes:
        """Wire format: one JSON header line, then the little-endian f32 vector."""
        header = json.dumps(
            {"layer_dims": list(self.layer_dims), "dtype": "<f4", "count": self.flat.size}
        ).encode("ascii")
        return header + b"\n" + self.flat.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelWeights":
        newline = blob.find(b"\n")
        if newline < 0:
            raise ConsistencyError("model payload is missing its header line")
        header = json.loads(blob[:newline].decode("ascii"))
        payload = blob[newline + 1 :]
        count = int(header["count"])
        if header.get("dtype") != "<f4" or len(payload) != 4 * count:
            raise ConsistencyError("model payload does not match its header")
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        return cls(tuple(header["layer_dims"]), flat)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelWeights":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def param_count(layer_dims) -> int:
    dims = tuple(layer_dims)
    return sum(din * dout + dout for din, dout in zip(dims[:-1], dims[1:]))


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 64
    learning_rate: float = 0.01
    proximal_mu: float = 0.0  # 0 disables the proximal pull

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0.0 or self.proximal_mu < 0.0:
            raise ValueError("learning_rate and proximal_mu must be non-negative")


@dataclass
class EvalReport:
    """Macro F1 plus the per-class diagnostics behind it."""

    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    loss: float
    present: np.ndarray = field(default=None)  # classes present in the truth

    def __post_init__(self):
        if not 0.0 <= self.macro_f1 <= 1.0:
            raise ValueError("macro F1 must lie in [0, 1]")


def _forward_pass(weights: ModelWeights, x: np.ndarray):
    """Pre-activations and activations of every layer; last entry is logits."""
    pre, act = [], [x]
    layer_list = list(weights.layers())
    for i, (mat, bias) in enumerate(layer_list):
        z = act[-1] @ mat + bias
        pre.append(z)
        act.append(np.maximum(z, 0.0) if i < len(layer_list) - 1 else z)
    return pre, act


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(weights: ModelWeights, features) -> np.ndarray:
    """Class probabilities for a batch; each row is a softmax distribution."""
    x = ensure_matrix(features, "features")
    if x.shape[1] != weights.layer_dims[0]:
        raise ConsistencyError(
            f"feature width {x.shape[1]} does not match model input {weights.layer_dims[0]}"
        )
    _, act = _forward_pass(weights, x)
    return np.exp(_log_softmax(act[-1]))


def loss_and_grad(
    weights: ModelWeights,
    features: np.ndarray,
    labels: np.ndarray,
    proximal_mu: float = 0.0,
    anchor: ModelWeights | None = None,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy (plus proximal penalty) and its flat gradient."""
    x = ensure_matrix(features, "features")
    y = np.asarray(labels, dtype=np.int64)
    n = len(y)
    pre, act = _forward_pass(weights, x)
    logp = _log_softmax(act[-1])
    loss = -float(logp[np.arange(n), y].mean())

    grad = ModelWeights.zeros(weights.layer_dims)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    mats = [mat for mat, _ in weights.layers()]
    grads = list(grad.layers())
    for i in range(len(mats) - 1, -1, -1):
        gmat, gbias = grads[i]
        gmat[:] = act[i].T @ delta
        gbias[:] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ mats[i].T) * (pre[i - 1] > 0.0)

    if proximal_mu > 0.0:
        ref = anchor if anchor is not None else weights
        diff = weights.flat - ref.flat
        loss += 0.5 * proximal_mu * float(diff @ diff)
        grad.flat += proximal_mu * diff
    return loss, grad.flat


def train_local(
    weights_in: ModelWeights,
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    rng: Rng,
    anchor: ModelWeights | None = None,
) -> ModelWeights:
    """Minibatch SGD for the configured number of epochs; returns new weights.

    With proximal_mu > 0 each step also pulls toward ``anchor`` (the caller's
    round-start model; the incoming weights when omitted). Deterministic
    given the rng: batches are drawn from rng.permutation each epoch.
    """
    if len(labels) == 0:
        raise ValueError("cannot train on an empty slice")
    x = ensure_matrix(features, "features")
    y = np.asarray(labels, dtype=np.int64)
    w = weights_in.copy()
    ref = anchor if anchor is not None else weights_in
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        for b, start in enumerate(range(0, len(y), config.batch_size)):
            batch = order[start : start + config.batch_size]
            loss, g = loss_and_grad(w, x[batch], y[batch], config.proximal_mu, ref)
            if not np.isfinite(loss):
                raise TrainingError("loss became non-finite", epoch=epoch, batch=b)
            w.flat -= config.learning_rate * g
    return w


def evaluate(weights: ModelWeights, features, labels, n_classes: int) -> EvalReport:
    """Argmax predictions scored with macro F1 over classes present in the truth.

    Classes absent from the evaluated slice are excluded from the macro mean
    (their zero precision/recall entries stay visible in the report).
    """
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty slice")
    x = ensure_matrix(features, "features")
    y = np.asarray(labels, dtype=np.int64)
    _, act = _forward_pass(weights, x)
    logp = _log_softmax(act[-1])
    loss = -float(logp[np.arange(len(y)), y].mean())
    preds = np.argmax(logp, axis=1)

    confusion = np.bincount(y * n_classes + preds, minlength=n_classes * n_classes)
    confusion = confusion.reshape(n_classes, n_classes)
    tp = np.diag(confusion).astype(np.float64)
    pred_totals = confusion.sum(axis=0).astype(np.float64)
    true_totals = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_totals > 0, tp / pred_totals, 0.0)
        recall = np.where(true_totals > 0, tp / true_totals, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    present = true_totals > 0
    macro = float(f1[present].mean())
    return EvalReport(macro, precision, recall, loss, present)
