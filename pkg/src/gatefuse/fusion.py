"""Fusion strategies that need no gate: fixed weights, averaging, and
concatenation followed by a linear softmax classifier.

Also holds the fixed-weight grid sweep over the probability simplex.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Sequence

import numpy as np

from .core import (
    InvalidInputError,
    MultimodalDataset,
    as_gating_weights,
    batch_log_loss,
    mix_experts,
    stable_softmax,
)


def _stack_experts(experts) -> np.ndarray:
    if len(experts) == 0:
        raise InvalidInputError("need at least one expert")
    try:
        x = np.array([np.asarray(e, dtype=np.float64) for e in experts])
    except ValueError:
        raise InvalidInputError("expert score vectors must all have the same length") from None
    if x.ndim != 2 or x.shape[1] == 0:
        raise InvalidInputError("expert score vectors must all have the same length")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("expert scores contain non-finite entries")
    return x


def fuse_weighted(experts: Sequence, z) -> np.ndarray:
    """Convex combination of expert score vectors, ``y = sum_j z_j x_j``."""
    x = _stack_experts(experts)
    w = as_gating_weights(z)
    if w.size != x.shape[0]:
        raise InvalidInputError(f"{x.shape[0]} experts but {w.size} weights")
    return mix_experts(x, w)


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def fuse_average(experts: Sequence) -> np.ndarray:
    """Plain ensemble average; identical to :func:`fuse_weighted` with uniform weights."""
    x = _stack_experts(experts)
    return fuse_weighted(x, uniform_weights(x.shape[0]))


def _steps_per_unit(step: float) -> int:
    if not 0.0 < step <= 1.0:
        raise InvalidInputError(f"step must lie in (0, 1], got {step!r}")
    K = Fraction(1) / Fraction(str(step)).limit_denominator(10**6)
    if K.denominator != 1 or abs(float(K) * step - 1.0) > 1e-9:
        raise InvalidInputError(f"1/step must be an integer, got step={step!r}")
    return int(K)


@dataclass(frozen=True)
class SweepGrid:
    step: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError("grid needs at least one modality")
        _steps_per_unit(self.step)

    @property
    def divisions(self) -> int:
        return _steps_per_unit(self.step)

    def __len__(self) -> int:
        return comb(self.divisions + self.n - 1, self.n - 1)

    def points(self) -> list[np.ndarray]:
        return enumerate_simplex_grid(self.n, self.step)


def _compositions(total: int, parts: int):
    # descending in the first part, then recursively in the remaining parts
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_simplex_grid(n: int, step: float) -> list[np.ndarray]:
    """All weight vectors with entries ``k * step`` summing to one.

    Entries are built as ``k / K`` from integers, so 0.1-steps do not drift.
    Order is descending in the first modality's weight: ``(1, 0), (0.9, 0.1), ...``.
    """
    if n < 1:
        raise InvalidInputError("grid needs at least one modality")
    K = _steps_per_unit(step)
    return [np.array([k / K for k in ks]) for ks in _compositions(K, n)]


@dataclass(frozen=True)
class SweepRow:
    weights: np.ndarray
    accuracy: float
    mean_log_loss: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    modality_names: tuple[str, ...]
    step: float
    best_row: int = field(init=False)

    def __post_init__(self):
        if not self.rows:
            raise InvalidInputError("a sweep needs at least one row")
        object.__setattr__(self, "best_row", _best_row(self.rows))

    @property
    def best(self) -> SweepRow:
        return self.rows[self.best_row]


def _best_row(rows: Sequence[SweepRow]) -> int:
    # highest accuracy; ties go to the lexicographically smallest weight vector
    return min(range(len(rows)), key=lambda i: (-rows[i].accuracy, tuple(rows[i].weights)))


def _score_point(dataset: MultimodalDataset, z: np.ndarray) -> SweepRow:
    fused = mix_experts(dataset.scores, z)
    pred = np.argmax(fused, axis=1)
    acc = float(np.count_nonzero(pred == dataset.labels)) / dataset.size
    return SweepRow(weights=z, accuracy=acc, mean_log_loss=float(batch_log_loss(fused, dataset.labels).mean()))


def run_weight_sweep(dataset: MultimodalDataset, grid: SweepGrid | float, n_jobs: int = 1) -> SweepResult:
    """Evaluate every fixed weight vector on the grid.

    Grid points are independent, so ``n_jobs > 1`` scores them on a thread
    pool; rows come back in grid order and are identical to the sequential run.
    """
    if not isinstance(grid, SweepGrid):
        grid = SweepGrid(step=float(grid), n=dataset.modality_count)
    if grid.n != dataset.modality_count:
        raise InvalidInputError(
            f"grid is for {grid.n} modalities but the dataset has {dataset.modality_count}"
        )
    points = grid.points()
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(lambda z: _score_point(dataset, z), points))
    else:
        rows = [_score_point(dataset, z) for z in points]
    return SweepResult(rows=tuple(rows), modality_names=dataset.modality_names, step=grid.step)


@dataclass(frozen=True, eq=False)
class LinearConcatModel:
    """Softmax classifier over the concatenated expert scores.

    ``weight`` has shape ``(C, n*C)`` and columns follow modality order.
    """

    weight: np.ndarray
    bias: np.ndarray
    epochs: int = 0
    learning_rate: float = 0.0
    seed: int = 0
    l2: float = 0.0
    final_loss: float = float("nan")

    @property
    def class_count(self) -> int:
        return self.weight.shape[0]

    @property
    def modality_count(self) -> int:
        return self.weight.shape[1] // self.weight.shape[0]

    def predict_proba(self, concat: np.ndarray) -> np.ndarray:
        return stable_softmax(concat @ self.weight.T + self.bias)


def _concat_inputs(dataset: MultimodalDataset) -> np.ndarray:
    return dataset.scores.reshape(dataset.size, -1)


def train_concat_linear(
    dataset: MultimodalDataset,
    epochs: int = 500,
    lr: float = 0.5,
    seed: int = 0,
    l2: float = 0.0,
) -> LinearConcatModel:
    """Full-batch gradient descent on multinomial cross-entropy."""
    if epochs <= 0:
        raise InvalidInputError(f"epochs must be positive, got {epochs}")
    if lr <= 0:
        raise InvalidInputError(f"learning rate must be positive, got {lr}")
    if l2 < 0:
        raise InvalidInputError(f"l2 must be non-negative, got {l2}")
    X = _concat_inputs(dataset)
    N, D = X.shape
    C = dataset.class_count
    rng = np.random.Generator(np.random.Philox(seed))
    W = rng.uniform(-0.01, 0.01, size=(C, D))
    b = np.zeros(C)
    onehot = np.zeros((N, C))
    onehot[np.arange(N), dataset.labels] = 1.0
    for _ in range(epochs):
        P = stable_softmax(X @ W.T + b)
        G = (P - onehot) / N
        W -= lr * (G.T @ X + l2 * W)
        b -= lr * G.sum(axis=0)
    P = stable_softmax(X @ W.T + b)
    loss = float(batch_log_loss(P, dataset.labels).mean() + 0.5 * l2 * np.sum(W * W))
    return LinearConcatModel(
        weight=W, bias=b, epochs=epochs, learning_rate=lr, seed=seed, l2=l2, final_loss=loss
    )


def fuse_concat_linear(experts: Sequence, model: LinearConcatModel) -> np.ndarray:
    x = _stack_experts(experts)
    if model.weight.shape != (x.shape[1], x.size) or model.bias.shape != (x.shape[1],):
        raise InvalidInputError(
            f"model expects {model.modality_count} experts of {model.class_count} classes, "
            f"got {x.shape[0]} of {x.shape[1]}"
        )
    return model.predict_proba(x.reshape(-1))
