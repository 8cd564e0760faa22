"""Deterministic mini-batch SGD for softmax classifiers.

Two architectures share one flat parameter layout: all weight matrices
(row-major, shape ``(fan_in, fan_out)``, forward order) followed by all
bias vectors (forward order).

Sample order inside an epoch is a pure function of ``(seed, stream_tag,
epoch)``. Training the first ``r`` slices therefore produces the same bits
whether or not later slices exist, which is what makes checkpoint-based
unlearning exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

__all__ = [
    "Arch",
    "ModelParams",
    "TrainConfig",
    "SliceSchedule",
    "GradCheckResult",
    "derive_seed",
    "init_params",
    "epoch_calibration",
    "train",
    "predict",
    "logits",
    "loss_and_grad",
    "gradient_check",
]

LOGISTIC = "logistic"
MLP = "mlp"


@dataclass(frozen=True)
class Arch:
    kind: str = LOGISTIC
    hidden_width: int = 0

    def __post_init__(self):
        if self.kind == LOGISTIC:
            if self.hidden_width != 0:
                raise ValueError("logistic arch takes no hidden width")
        elif self.kind == MLP:
            if self.hidden_width < 1:
                raise ValueError("mlp hidden_width must be >= 1")
        else:
            raise ValueError(f"unknown arch {self.kind!r}")

    @classmethod
    def logistic(cls) -> "Arch":
        return cls(LOGISTIC, 0)

    @classmethod
    def mlp(cls, hidden_width: int) -> "Arch":
        return cls(MLP, hidden_width)

    def layer_dims(self, feature_dim: int, num_classes: int) -> list[tuple[int, int]]:
        if self.kind == LOGISTIC:
            return [(feature_dim, num_classes)]
        return [(feature_dim, self.hidden_width), (self.hidden_width, num_classes)]

    def num_weights(self, feature_dim: int, num_classes: int) -> int:
        dims = self.layer_dims(feature_dim, num_classes)
        return sum(a * b for a, b in dims) + sum(b for _, b in dims)


@dataclass(frozen=True, eq=False)
class ModelParams:
    arch: Arch
    feature_dim: int
    num_classes: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        expected = self.arch.num_weights(self.feature_dim, self.num_classes)
        if w.ndim != 1 or w.size != expected:
            raise ValueError(f"expected {expected} weights for {self.arch}, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise NumericalError("non-finite weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def replace_weights(self, w) -> "ModelParams":
        return ModelParams(self.arch, self.feature_dim, self.num_classes, w)

    def layers(self, w=None):
        """``[(W, b), ...]`` views into the flat vector ``w`` (defaults to own weights)."""
        w = self.weights if w is None else w
        dims = self.arch.layer_dims(self.feature_dim, self.num_classes)
        mats, off = [], 0
        for a, b in dims:
            mats.append(w[off:off + a * b].reshape(a, b))
            off += a * b
        biases = []
        for _, b in dims:
            biases.append(w[off:off + b])
            off += b
        return list(zip(mats, biases))

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.arch == other.arch and self.feature_dim == other.feature_dim
                and self.num_classes == other.num_classes
                and self.weights.tobytes() == other.weights.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class TrainConfig:
    base_epochs: int = 10
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.base_epochs < 1:
            raise ValueError("base_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class SliceSchedule:
    R: int
    epochs_per_slice: tuple
    total_epochs: float


def derive_seed(*parts: int) -> int:
    """64-bit seed hashed from non-negative integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)
    return int(state[0])


def _epoch_rng(seed: int, stream_tag: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream_tag, epoch])))


def init_params(arch: Arch, feature_dim: int, num_classes: int, seed: int) -> ModelParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, zero biases."""
    if feature_dim < 1 or num_classes < 2:
        raise ValueError("need feature_dim >= 1 and num_classes >= 2")
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims(feature_dim, num_classes)
    parts = []
    for a, b in dims:
        bound = 1.0 / math.sqrt(a)
        parts.append(rng.uniform(-bound, bound, size=a * b))
    parts.extend(np.zeros(b) for _, b in dims)
    return ModelParams(arch, feature_dim, num_classes, np.concatenate(parts))


def epoch_calibration(base_epochs: int, R: int) -> SliceSchedule:
    """Epoch budget that keeps total samples seen equal to the unsliced run.

    ``e = 2R/(R+1) * e'`` split equally, so each slice step gets ``2e'/(R+1)``.
    """
    if base_epochs < 1 or R < 1:
        raise ValueError("need base_epochs >= 1 and R >= 1")
    per_slice = 2.0 * base_epochs / (R + 1)
    return SliceSchedule(R, (per_slice,) * R, 2.0 * R * base_epochs / (R + 1))


def _check_dims(params: ModelParams, X: np.ndarray):
    if X.ndim != 2 or X.shape[1] != params.feature_dim:
        raise ValueError(f"expected features of width {params.feature_dim}, got shape {X.shape}")


def _forward(params: ModelParams, w, X):
    layers = params.layers(w)
    if params.arch.kind == LOGISTIC:
        (W, b), = layers
        return X @ W + b, None
    (W1, b1), (W2, b2) = layers
    H = np.tanh(X @ W1 + b1)
    return H @ W2 + b2, H


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(params: ModelParams, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    _check_dims(params, X2)
    z, _ = _forward(params, params.weights, X2)
    return z[0] if single else z


def predict(params: ModelParams, features) -> np.ndarray:
    """Softmax class probabilities for one feature vector (or a batch of rows)."""
    return _softmax(logits(params, features))


def loss_and_grad(params: ModelParams, X, y, w=None):
    """Mean cross-entropy over the rows of ``X`` and its gradient (flat)."""
    w = params.weights if w is None else w
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    z, H = _forward(params, w, X)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), y]))
    delta = np.exp(z - logsum[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n
    if params.arch.kind == LOGISTIC:
        gW = X.T @ delta
        grad = np.concatenate([gW.ravel(), delta.sum(axis=0)])
    else:
        (_, _), (W2, _) = params.layers(w)
        gW2 = H.T @ delta
        dH = (delta @ W2.T) * (1.0 - H * H)
        gW1 = X.T @ dH
        grad = np.concatenate([gW1.ravel(), gW2.ravel(), dH.sum(axis=0), delta.sum(axis=0)])
    return loss, grad


def train(params: ModelParams, X, y, epochs: float, cfg: TrainConfig, stream_tag: int = 0):
    """Run ``epochs`` passes of mini-batch SGD over ``(X, y)``.

    Returns ``(new_params, samples_processed)`` where ``samples_processed``
    is exactly ``floor(epochs * len(y))``. A fractional final pass stops
    after that many samples of its permutation. Batches are clamped to the
    data size when the data is smaller than ``cfg.batch_size``.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = int(y.shape[0])
    if n == 0:
        return params, 0
    _check_dims(params, X)
    if X.shape[0] != n:
        raise ValueError("X and y lengths differ")
    total = math.floor(epochs * n)
    if total == 0:
        return params, 0
    bs = min(cfg.batch_size, n)
    lr = cfg.learning_rate
    w = params.weights.copy()
    consumed = epoch = batch_index = 0
    while consumed < total:
        perm = _epoch_rng(cfg.seed, stream_tag, epoch).permutation(n)
        take = min(n, total - consumed)
        for start in range(0, take, bs):
            idx = perm[start:min(start + bs, take)]
            loss, grad = loss_and_grad(params, X[idx], y[idx], w)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at batch {batch_index}")
            with np.errstate(over="ignore", invalid="ignore"):
                w -= lr * grad
            if not np.all(np.isfinite(w)):
                raise NumericalError(f"non-finite weights after batch {batch_index} (epoch {epoch})")
            batch_index += 1
        consumed += take
        epoch += 1
    return params.replace_weights(w), consumed


@dataclass(frozen=True)
class GradCheckResult:
    ok: bool
    rel_error: float
    max_abs_error: float
    worst_index: int
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)

    def __bool__(self):
        return self.ok


def gradient_check(params: ModelParams, x, y, tolerance: float, step: float = 1e-6,
                   grad_fn=None) -> GradCheckResult:
    """Compare the analytic gradient at one point with central differences.

    The error is ``||g_a - g_n|| / (||g_a|| + ||g_n||)`` so coordinates with
    near-zero gradient do not dominate through finite-difference noise.
    ``grad_fn(params, X, y) -> (loss, grad)`` overrides the analytic path.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if params.weights.size > 200:
        raise ValueError("gradient_check is limited to models with <= 200 parameters")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _, analytic = (grad_fn or loss_and_grad)(params, X, Y)
    analytic = np.asarray(analytic, dtype=np.float64)
    w = params.weights.copy()
    numeric = np.empty_like(w)
    for j in range(w.size):
        orig = w[j]
        w[j] = orig + step
        fp, _ = loss_and_grad(params, X, Y, w)
        w[j] = orig - step
        fm, _ = loss_and_grad(params, X, Y, w)
        w[j] = orig
        numeric[j] = (fp - fm) / (2 * step)
    diff = np.abs(analytic - numeric)
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    rel = float(np.linalg.norm(analytic - numeric) / denom) if denom > 0 else 0.0
    return GradCheckResult(rel <= tolerance, rel, float(diff.max()), int(diff.argmax()),
                           analytic, numeric)
