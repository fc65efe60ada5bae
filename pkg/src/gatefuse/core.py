"""Numeric primitives and data containers shared by every fusion strategy.

Score vectors, gate logits and gate weights are plain 1-D float64 numpy
arrays. A dataset stores its expert scores as a dense ``(N, n, C)`` block so
that strategies can fuse the whole dataset at once; per-sample
:class:`SampleRecord` views are built on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

PROB_ATOL = 1e-9
SIMPLEX_ATOL = 1e-12
LOG_EPS = 1e-12


class FusionError(Exception):
    """Base class for all errors raised by gatefuse."""


class InvalidInputError(FusionError, ValueError):
    """An argument violates an operation's preconditions."""


class ValidationError(InvalidInputError):
    """Data is well-formed but breaks a semantic invariant (e.g. not a probability vector)."""


class UnsupportedModeError(FusionError, ValueError):
    """Operation is not defined for the requested mode."""


class TrainingDivergedError(FusionError, ArithmeticError):
    """Training produced a non-finite loss."""


class ParseError(FusionError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class ConfigError(FusionError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class ArtifactIOError(FusionError, OSError):
    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Convert to a finite, non-empty float64 1-D array or raise InvalidInputError."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def is_probability(values, atol: float = PROB_ATOL) -> bool:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        return False
    return bool(np.all(arr >= 0.0) and abs(arr.sum(axis=-1) - 1.0).max() <= atol)


def as_score_vector(values, probability: bool = False) -> np.ndarray:
    """Validate a per-class expert score vector (length >= 2)."""
    arr = as_vector(values, "score vector")
    if arr.size < 2:
        raise InvalidInputError("score vector needs at least 2 classes")
    if probability and not is_probability(arr):
        raise ValidationError("score vector is not a probability vector")
    return arr


def as_gating_weights(values, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate a point on the probability simplex (one weight per expert)."""
    arr = as_vector(values, "gating weights")
    if np.any(arr < 0.0):
        raise InvalidInputError("gating weights must be non-negative")
    if abs(arr.sum() - 1.0) > atol:
        raise InvalidInputError(f"gating weights must sum to 1 (got {arr.sum()!r})")
    return arr


def stable_softmax(logits) -> np.ndarray:
    """Softmax with the maximum logit subtracted before exponentiation.

    Works on a single vector or row-wise on a 2-D array.
    """
    w = np.asarray(logits, dtype=np.float64)
    if w.size == 0 or w.shape[-1] == 0:
        raise InvalidInputError("softmax of an empty vector")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("softmax input contains non-finite entries")
    e = np.exp(w - w.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def argmax_label(scores) -> int:
    """Index of the largest score; ties go to the lowest index."""
    arr = as_vector(scores, "scores")
    return int(np.argmax(arr))


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    t = np.asarray(labels)
    if p.ndim != 1 or t.ndim != 1 or p.size == 0 or p.shape != t.shape:
        raise InvalidInputError(
            f"predictions and labels must be equal-length non-empty sequences "
            f"(got {p.shape} and {t.shape})"
        )
    return float(np.count_nonzero(p == t)) / p.size


def log_loss(fused, label: int) -> float:
    """Cross-entropy ``-ln max(fused[label], 1e-12)`` of one probability vector."""
    y = as_vector(fused, "fused scores")
    if not is_probability(y):
        raise InvalidInputError("log_loss expects a probability vector")
    if not 0 <= label < y.size:
        raise InvalidInputError(f"label {label} out of range for {y.size} classes")
    return float(-np.log(max(y[label], LOG_EPS)))


def batch_log_loss(fused: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row log-loss of an ``(N, C)`` block of probability vectors."""
    picked = fused[np.arange(fused.shape[0]), labels]
    return -np.log(np.maximum(picked, LOG_EPS))


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C), row = true class, column = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(predictions, labels, class_count: int) -> ConfusionMatrix:
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(labels, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise InvalidInputError("predictions and labels must be equal-length sequences")
    if p.size and (p.min() < 0 or t.min() < 0 or p.max() >= class_count or t.max() >= class_count):
        raise InvalidInputError(f"class index out of range [0, {class_count})")
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    label: int
    expert_scores: Mapping[str, np.ndarray]
    context: np.ndarray | None = None

    @property
    def scores(self) -> np.ndarray:
        """Expert scores stacked in modality order, shape ``(n, C)``."""
        return np.stack(list(self.expert_scores.values()))


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MultimodalDataset:
    """N labelled samples, each carrying one score vector per modality.

    Args:
        scores: ``(N, n, C)`` expert scores; axis 1 follows ``modality_names``.
        labels: ``(N,)`` class indices.
        modality_names: fixes the expert index ``j`` used by every strategy.
        context: optional ``(N, D_ctx)`` side features for the gate.
        ids: sample identifiers; defaults to ``"0"``, ``"1"``, ...
        require_probability: reject score vectors that are not on the simplex.
    """

    scores: np.ndarray
    labels: np.ndarray
    modality_names: tuple[str, ...]
    context: np.ndarray | None = None
    ids: tuple[str, ...] = field(default=())
    require_probability: bool = True

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        names = tuple(str(m) for m in self.modality_names)
        if scores.ndim != 3:
            raise InvalidInputError(f"scores must have shape (N, n, C), got {scores.shape}")
        N, n, C = scores.shape
        if N < 1:
            raise InvalidInputError("dataset must contain at least one sample")
        if n < 1 or C < 2:
            raise InvalidInputError(f"need n >= 1 modalities and C >= 2 classes, got n={n}, C={C}")
        if len(names) != n or len(set(names)) != n:
            raise InvalidInputError(f"need {n} distinct modality names, got {names}")
        if labels.shape != (N,):
            raise InvalidInputError(f"labels must have shape ({N},), got {labels.shape}")
        if labels.min() < 0 or labels.max() >= C:
            raise InvalidInputError(f"labels must lie in [0, {C})")
        if not np.all(np.isfinite(scores)):
            raise InvalidInputError("scores contain non-finite entries")
        if self.require_probability and not is_probability(scores):
            raise ValidationError("expert scores must be probability vectors")
        context = self.context
        if context is not None:
            context = np.array(context, dtype=np.float64)
            if context.ndim != 2 or context.shape[0] != N:
                raise InvalidInputError(f"context must have shape ({N}, D), got {context.shape}")
            if context.shape[1] == 0:
                context = None
            elif not np.all(np.isfinite(context)):
                raise InvalidInputError("context contains non-finite entries")
        ids = tuple(str(i) for i in self.ids) if self.ids else tuple(str(i) for i in range(N))
        if len(ids) != N:
            raise InvalidInputError(f"expected {N} ids, got {len(ids)}")
        object.__setattr__(self, "scores", _readonly(scores))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "modality_names", names)
        object.__setattr__(self, "context", None if context is None else _readonly(context))
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_records(
        cls, records: Iterable[SampleRecord], modality_names: Sequence[str] | None = None
    ) -> "MultimodalDataset":
        records = list(records)
        if not records:
            raise InvalidInputError("dataset must contain at least one sample")
        names = tuple(modality_names or records[0].expert_scores.keys())
        has_ctx = records[0].context is not None
        rows, ctx = [], []
        for rec in records:
            if tuple(rec.expert_scores.keys()) != names:
                raise InvalidInputError(f"sample {rec.id!r} has modalities {tuple(rec.expert_scores)}, expected {names}")
            if (rec.context is not None) != has_ctx:
                raise InvalidInputError(f"sample {rec.id!r} context presence differs from the first sample")
            lengths = {len(v) for v in rec.expert_scores.values()}
            if len(lengths) != 1:
                raise InvalidInputError(f"sample {rec.id!r} has score vectors of unequal length")
            rows.append([np.asarray(rec.expert_scores[m], dtype=np.float64) for m in names])
            if has_ctx:
                ctx.append(np.asarray(rec.context, dtype=np.float64))
        try:
            scores = np.array(rows, dtype=np.float64)
            context = np.array(ctx, dtype=np.float64) if has_ctx else None
        except ValueError as exc:
            raise InvalidInputError(f"samples do not share one schema: {exc}") from None
        return cls(
            scores=scores,
            labels=np.array([r.label for r in records]),
            modality_names=names,
            context=context,
            ids=tuple(r.id for r in records),
        )

    @property
    def size(self) -> int:
        return self.scores.shape[0]

    @property
    def modality_count(self) -> int:
        return self.scores.shape[1]

    @property
    def class_count(self) -> int:
        return self.scores.shape[2]

    @property
    def context_dim(self) -> int:
        return 0 if self.context is None else self.context.shape[1]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, i: int) -> SampleRecord:
        return SampleRecord(
            id=self.ids[i],
            label=int(self.labels[i]),
            expert_scores={m: self.scores[i, j] for j, m in enumerate(self.modality_names)},
            context=None if self.context is None else self.context[i],
        )

    @property
    def samples(self) -> list[SampleRecord]:
        return [self[i] for i in range(self.size)]

    def subset(self, indices) -> "MultimodalDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultimodalDataset(
            scores=self.scores[idx],
            labels=self.labels[idx],
            modality_names=self.modality_names,
            context=None if self.context is None else self.context[idx],
            ids=tuple(self.ids[i] for i in idx),
            require_probability=self.require_probability,
        )

    def identical_to(self, other: "MultimodalDataset") -> bool:
        """Field-for-field equality, comparing floats by bit pattern."""
        if not isinstance(other, MultimodalDataset):
            return False
        if self.modality_names != other.modality_names or self.ids != other.ids:
            return False
        if (self.context is None) != (other.context is None):
            return False
        same = (
            self.scores.shape == other.scores.shape
            and self.scores.tobytes() == other.scores.tobytes()
            and np.array_equal(self.labels, other.labels)
        )
        if same and self.context is not None:
            same = self.context.shape == other.context.shape and self.context.tobytes() == other.context.tobytes()
        return same


def mix_experts(scores: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of experts, ``y[..., c] = sum_j weights[..., j] * scores[..., j, c]``.

    ``weights`` is either one shared vector of length n or one row per sample.
    Summation runs over j in ascending order so that every strategy built on
    this function agrees bit-for-bit. Rows whose experts all agree return that
    shared vector exactly, so the mix is flat in the weights there.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = scores.shape[-2]
    out = w[..., 0, None] * scores[..., 0, :]
    for j in range(1, n):
        out = out + w[..., j, None] * scores[..., j, :]
    agree = np.all(scores == scores[..., :1, :], axis=(-2, -1))
    return np.where(agree[..., None], scores[..., 0, :], out)
