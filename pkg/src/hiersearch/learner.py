"""Feature-to-embedding mapper trained with a correlation + cross-entropy loss.

The mapper sends a raw feature vector ``x`` onto the unit hypersphere of the
class embeddings and classifies the result with a softmax head::

    h = x                        (or tanh(A x + a) with a hidden layer)
    z = W h + b
    e = z / |z|
    logits = V e + c

Per sample the objective is ``w_corr * (1 - e . phi(y)) + lam * CE(logits, y)``
averaged over the batch, where ``phi(y)`` is the class embedding of label
``y``. Gradients are analytic, including the path through the normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .embedding import UNIT_TOL, ClassEmbeddingTable
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    InvalidConfig,
    NoData,
    NonFiniteInput,
    NotUnitNorm,
    OutOfRangeEpoch,
    UnknownClassIndex,
)

_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 180
    batch_size: int = 8
    restart_epochs: tuple[int, ...] = (12, 36, 84, 180)
    lr_max: float = 0.1
    lr_min: float = 1e-5
    seed: int = 0
    loss_mix: float = 1.0
    # 0 gives the cross-entropy-only (classification-based) baseline
    correlation_weight: float = 1.0
    hidden_dim: int | None = None
    momentum: float = 0.0
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "restart_epochs", tuple(int(e) for e in self.restart_epochs))
        r = self.restart_epochs
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be positive")
        if not r or r[0] <= 0 or any(b <= a for a, b in zip(r, r[1:])):
            raise InvalidConfig(f"restart epochs must be positive and strictly increasing: {r}")
        if r[-1] > self.epochs:
            raise InvalidConfig(f"last restart {r[-1]} exceeds epochs {self.epochs}")
        if not 0 <= self.lr_min <= self.lr_max:
            raise InvalidConfig("need 0 <= lr_min <= lr_max")
        if self.loss_mix < 0 or self.correlation_weight < 0:
            raise InvalidConfig("loss weights must be non-negative")
        if not 0 <= self.momentum < 1:
            raise InvalidConfig("momentum must be in [0, 1)")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise InvalidConfig("hidden_dim must be positive")


@dataclass(frozen=True)
class Mapper:
    """Affine (optionally one tanh hidden layer) map plus softmax head."""

    map_weights: np.ndarray
    map_bias: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray
    loss_mix: float = 1.0
    hidden_weights: np.ndarray | None = None
    hidden_bias: np.ndarray | None = None

    def __post_init__(self):
        for name in ("map_weights", "map_bias", "head_weights", "head_bias", "hidden_weights", "hidden_bias"):
            value = getattr(self, name)
            if value is not None:
                arr = np.array(value, dtype=np.float64)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        n, h = self.map_weights.shape
        if self.map_bias.shape != (n,):
            raise DimensionMismatch("map_bias must match map_weights rows")
        if self.head_weights.shape[1] != n or self.head_bias.shape != (self.head_weights.shape[0],):
            raise DimensionMismatch("head shapes do not match the embedding dim")
        if (self.hidden_weights is None) != (self.hidden_bias is None):
            raise DimensionMismatch("hidden weights and bias must be given together")
        if self.hidden_weights is not None and (
            self.hidden_weights.shape[0] != h or self.hidden_bias.shape != (h,)
        ):
            raise DimensionMismatch("hidden layer shapes do not match map_weights")

    @property
    def input_dim(self) -> int:
        w = self.hidden_weights if self.hidden_weights is not None else self.map_weights
        return w.shape[1]

    @property
    def output_dim(self) -> int:
        return self.map_weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.head_weights.shape[0]

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        output_dim: int,
        n_classes: int,
        rng: np.random.Generator | int | None = None,
        hidden_dim: int | None = None,
        loss_mix: float = 1.0,
        scale: float = 1.0,
    ) -> "Mapper":
        """Gaussian init with variance ``scale / fan_in``; zero biases."""
        rng = np.random.default_rng(rng)
        extra = {}
        fan_in = input_dim
        if hidden_dim is not None:
            extra["hidden_weights"] = rng.normal(0, math.sqrt(scale / input_dim), (hidden_dim, input_dim))
            extra["hidden_bias"] = np.zeros(hidden_dim)
            fan_in = hidden_dim
        return cls(
            map_weights=rng.normal(0, math.sqrt(scale / fan_in), (output_dim, fan_in)),
            map_bias=np.zeros(output_dim),
            head_weights=rng.normal(0, math.sqrt(scale / output_dim), (n_classes, output_dim)),
            head_bias=np.zeros(n_classes),
            loss_mix=loss_mix,
            **extra,
        )

    def params(self) -> dict[str, np.ndarray]:
        names = ["map_weights", "map_bias", "head_weights", "head_bias"]
        if self.hidden_weights is not None:
            names += ["hidden_weights", "hidden_bias"]
        return {k: getattr(self, k) for k in names}

    def with_params(self, **params: np.ndarray) -> "Mapper":
        return replace(self, **params)


class Forward(NamedTuple):
    embedding: np.ndarray
    logits: np.ndarray
    degenerate: bool


class _Cache(NamedTuple):
    X: np.ndarray
    H: np.ndarray
    norms: np.ndarray
    E: np.ndarray
    logits: np.ndarray
    degenerate: np.ndarray


def _check_inputs(m: Mapper, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.input_dim:
        raise DimensionMismatch(f"expected inputs of length {m.input_dim}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("input features contain NaN or inf")
    return X


def _forward(m: Mapper, X: np.ndarray) -> _Cache:
    X = _check_inputs(m, X)
    H = X
    if m.hidden_weights is not None:
        H = np.tanh(X @ m.hidden_weights.T + m.hidden_bias)
    Z = H @ m.map_weights.T + m.map_bias
    norms = np.linalg.norm(Z, axis=1)
    degenerate = norms < _TINY
    E = np.empty_like(Z)
    E[~degenerate] = Z[~degenerate] / norms[~degenerate, None]
    E[degenerate] = 0.0
    E[degenerate, 0] = 1.0
    logits = E @ m.head_weights.T + m.head_bias
    return _Cache(X, H, norms, E, logits, degenerate)


def forward(m: Mapper, x: np.ndarray) -> Forward:
    """Unit embedding and class logits of one feature vector.

    A zero pre-normalization vector maps to the first basis vector and sets
    ``degenerate``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d feature vector, got shape {x.shape}")
    c = _forward(m, x[None, :])
    return Forward(c.E[0], c.logits[0], bool(c.degenerate[0]))


def embed(m: Mapper, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`forward`: returns ``(embeddings, degenerate_mask)``."""
    c = _forward(m, np.atleast_2d(X))
    return c.E, c.degenerate


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def classify(m: Mapper, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Predicted class index (lowest index on ties) and softmax probabilities."""
    probs = softmax(forward(m, x).logits)
    return int(np.argmax(probs)), probs


def correlation_loss(embedding: np.ndarray, target: np.ndarray) -> float:
    """``1 - embedding . target`` for two unit vectors; lies in [0, 2]."""
    embedding = np.asarray(embedding, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if embedding.shape != target.shape:
        raise DimensionMismatch(f"{embedding.shape} vs {target.shape}")
    for name, v in (("embedding", embedding), ("target", target)):
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise NotUnitNorm(f"{name} norm {np.linalg.norm(v):.6g} is not 1")
    return float(1.0 - embedding @ target)


def _as_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) and batch[0].ndim == 2:
        X, y = batch
    else:
        batch = list(batch)
        if not batch:
            raise EmptyBatch("batch is empty")
        X = np.array([np.asarray(x, dtype=np.float64) for x, _ in batch])
        y = np.array([int(c) for _, c in batch])
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise EmptyBatch("batch is empty")
    if y.shape != (len(X),):
        raise DimensionMismatch("one class index per sample required")
    return X, y


def _targets(m: Mapper, table: ClassEmbeddingTable, y: np.ndarray) -> np.ndarray:
    if table.embedding_dim != m.output_dim:
        raise DimensionMismatch(
            f"mapper emits {m.output_dim}-d embeddings, table has {table.embedding_dim}"
        )
    bad = (y < 0) | (y >= min(table.n_classes, m.n_classes))
    if bad.any():
        raise UnknownClassIndex(f"class indices out of range: {sorted(set(y[bad].tolist()))}")
    return table.vectors[y]


def loss_terms(m: Mapper, batch, table: ClassEmbeddingTable) -> tuple[float, float]:
    """Batch means of the correlation and cross-entropy terms (unweighted)."""
    X, y = _as_batch(batch)
    T = _targets(m, table, y)
    c = _forward(m, X)
    corr = 1.0 - np.einsum("ij,ij->i", c.E, T)
    ce = -log_softmax(c.logits)[np.arange(len(y)), y]
    return float(corr.mean()), float(ce.mean())


def combined_loss(m: Mapper, batch, table: ClassEmbeddingTable, correlation_weight: float = 1.0) -> float:
    corr, ce = loss_terms(m, batch, table)
    return correlation_weight * corr + m.loss_mix * ce


def loss_gradient(
    m: Mapper, batch, table: ClassEmbeddingTable, correlation_weight: float = 1.0
) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`combined_loss` w.r.t. every mapper parameter."""
    X, y = _as_batch(batch)
    T = _targets(m, table, y)
    c = _forward(m, X)
    B = len(y)

    # softmax - onehot, scaled for the batch mean
    d_logits = softmax(c.logits)
    d_logits[np.arange(B), y] -= 1.0
    d_logits *= m.loss_mix / B

    grads = {
        "head_weights": d_logits.T @ c.E,
        "head_bias": d_logits.sum(axis=0),
    }
    d_E = -correlation_weight / B * T + d_logits @ m.head_weights
    # through e = z / |z|: (I - e e^T) g / |z|
    d_Z = np.zeros_like(d_E)
    ok = ~c.degenerate
    proj = d_E[ok] - c.E[ok] * np.einsum("ij,ij->i", c.E[ok], d_E[ok])[:, None]
    d_Z[ok] = proj / c.norms[ok, None]

    grads["map_weights"] = d_Z.T @ c.H
    grads["map_bias"] = d_Z.sum(axis=0)
    if m.hidden_weights is not None:
        d_A = (d_Z @ m.map_weights) * (1.0 - c.H**2)
        grads["hidden_weights"] = d_A.T @ c.X
        grads["hidden_bias"] = d_A.sum(axis=0)
    return grads


def sgdr_learning_rate(epoch: float, cfg: TrainConfig) -> float:
    """Cosine-annealed rate, reset to ``lr_max`` at every restart epoch.

    Segments run ``[0, r1), [r1, r2), ...``; the final segment also covers its
    end point, where the rate reaches ``lr_min``.
    """
    if not 0 <= epoch <= cfg.epochs:
        raise OutOfRangeEpoch(f"epoch {epoch} outside [0, {cfg.epochs}]")
    bounds = [0, *cfg.restart_epochs]
    if bounds[-1] < cfg.epochs:
        bounds.append(cfg.epochs)
    for start, end in zip(bounds, bounds[1:]):
        if epoch < end or end == bounds[-1]:
            break
    frac = (epoch - start) / (end - start)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class LossHistory:
    """Per-epoch training-set loss, measured after each epoch."""

    initial: tuple[float, float, float]
    epoch: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    correlation: list[float] = field(default_factory=list)
    cross_entropy: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch)

    def rows(self) -> Iterable[tuple[int, float, float, float, float]]:
        return zip(self.epoch, self.lr, self.correlation, self.cross_entropy, self.total)


def _dataset(features) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(features, tuple) and len(features) == 2 and isinstance(features[0], np.ndarray):
        X, y = features
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    else:
        features = list(features)
        if not features:
            raise NoData("no training samples")
        X = np.array([np.asarray(x, dtype=np.float64) for x, _ in features])
        y = np.array([int(c) for _, c in features], dtype=np.int64)
    if len(X) == 0:
        raise NoData("no training samples")
    return X, y


def train_mapper(
    features: Sequence[tuple[np.ndarray, int]] | tuple[np.ndarray, np.ndarray],
    table: ClassEmbeddingTable,
    cfg: TrainConfig = TrainConfig(),
    n_classes: int | None = None,
) -> tuple[Mapper, LossHistory]:
    """Minibatch SGD under the warm-restart schedule.

    Deterministic for a fixed ``cfg.seed``: initialization and the per-epoch
    shuffles draw from one generator, and batch reductions run in a fixed
    order.
    """
    X, y = _dataset(features)
    n_classes = table.n_classes if n_classes is None else n_classes
    if y.min() < 0 or y.max() >= n_classes:
        raise UnknownClassIndex(f"class indices must lie in [0, {n_classes})")
    rng = np.random.default_rng(cfg.seed)
    m = Mapper.initialize(
        X.shape[1], table.embedding_dim, n_classes, rng,
        hidden_dim=cfg.hidden_dim, loss_mix=cfg.loss_mix, scale=cfg.init_scale,
    )

    def measure(model):
        corr, ce = loss_terms(model, (X, y), table)
        return corr, ce, cfg.correlation_weight * corr + cfg.loss_mix * ce

    history = LossHistory(initial=measure(m))
    params = {k: v.copy() for k, v in m.params().items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n_batches = math.ceil(len(X) / cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = sgdr_learning_rate(epoch + b / n_batches, cfg)
            grads = loss_gradient(m, (X[idx], y[idx]), table, cfg.correlation_weight)
            for k, g in grads.items():
                velocity[k] = cfg.momentum * velocity[k] - lr * g
                params[k] += velocity[k]
            m = m.with_params(**params)
        corr, ce, total = measure(m)
        history.epoch.append(epoch + 1)
        history.lr.append(sgdr_learning_rate(epoch, cfg))
        history.correlation.append(corr)
        history.cross_entropy.append(ce)
        history.total.append(total)
    return m, history
