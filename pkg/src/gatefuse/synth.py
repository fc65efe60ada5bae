"""Synthetic multimodal data with a known generative model.

Each sample draws a uniform label and a uniform context ``k``. Expert ``m``
votes for the true class with probability ``r[m][k]`` and otherwise for a
uniformly chosen wrong class. In ``vote`` mode the expert's score vector is
a smoothed one-hot of its vote, which makes the exact Bayes posterior
computable by enumeration over classes. ``soft`` mode passes a noisy,
scaled one-hot through a softmax and has no oracle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    InvalidInputError,
    MultimodalDataset,
    UnsupportedModeError,
    stable_softmax,
)

VOTE_SMOOTHING = 0.05
MODES = ("vote", "soft")


@dataclass(frozen=True)
class SynthSpec:
    """Generator parameters.

    ``reliability[m][k]`` is the probability that expert ``m`` votes the
    true class in context ``k``; every entry must lie strictly in (0, 1).
    """

    class_count: int
    reliability: tuple[tuple[float, ...], ...]
    sample_count: int
    seed: int = 0
    mode: str = "vote"
    sharpness: float = 3.0
    noise: float = 0.5
    modality_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        r = tuple(tuple(float(v) for v in row) for row in self.reliability)
        object.__setattr__(self, "reliability", r)
        if self.class_count < 2:
            raise InvalidInputError(f"class_count must be at least 2, got {self.class_count}")
        if not r or not r[0] or len({len(row) for row in r}) != 1:
            raise InvalidInputError("reliability must be a non-empty n x K matrix")
        if not all(0.0 < v < 1.0 for row in r for v in row):
            raise InvalidInputError("reliability entries must lie strictly in (0, 1)")
        if self.sample_count < 1:
            raise InvalidInputError(f"sample_count must be positive, got {self.sample_count}")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sharpness < 0 or self.noise < 0:
            raise InvalidInputError("sharpness and noise must be non-negative")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        names = tuple(self.modality_names) or tuple(f"m{j}" for j in range(len(r)))
        if len(names) != len(r):
            raise InvalidInputError(f"{len(names)} modality names for {len(r)} modalities")
        object.__setattr__(self, "modality_names", names)

    @property
    def modality_count(self) -> int:
        return len(self.reliability)

    @property
    def context_count(self) -> int:
        return len(self.reliability[0])

    @property
    def r(self) -> np.ndarray:
        return np.array(self.reliability)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reliability"] = [list(row) for row in self.reliability]
        d["modality_names"] = list(self.modality_names)
        return d


# Reference workload: each modality is reliable in exactly one of two contexts.
S_STAR = SynthSpec(
    class_count=10,
    reliability=((0.95, 0.55), (0.55, 0.95)),
    sample_count=8000,
    seed=7,
    mode="vote",
)


@dataclass(frozen=True)
class VoteRecord:
    votes: tuple[int, ...]
    context: int
    label: int | None = None


@dataclass(frozen=True)
class SynthDraw:
    """Everything drawn for one dataset, before score vectors are formed."""

    labels: np.ndarray  # (N,)
    contexts: np.ndarray  # (N,)
    votes: np.ndarray  # (N, n)


def draw(spec: SynthSpec) -> SynthDraw:
    rng = np.random.Generator(np.random.Philox(spec.seed))
    N, n, C = spec.sample_count, spec.modality_count, spec.class_count
    labels = rng.integers(0, C, size=N)
    contexts = rng.integers(0, spec.context_count, size=N)
    correct = rng.random(size=(N, n)) < spec.r[:, contexts].T
    # wrong votes: uniform over the C-1 classes other than the label
    offset = rng.integers(0, C - 1, size=(N, n))
    wrong = np.where(offset < labels[:, None], offset, offset + 1)
    votes = np.where(correct, labels[:, None], wrong)
    return SynthDraw(labels=labels, contexts=contexts, votes=votes)


def generate(spec: SynthSpec) -> MultimodalDataset:
    """Draw a dataset; identical specs give bit-identical datasets."""
    d = draw(spec)
    N, n, C = spec.sample_count, spec.modality_count, spec.class_count
    onehot = np.zeros((N, n, C))
    np.put_along_axis(onehot, d.votes[:, :, None], 1.0, axis=2)
    if spec.mode == "vote":
        eps = VOTE_SMOOTHING
        scores = np.where(onehot == 1.0, 1.0 - eps, eps / (C - 1))
    else:
        noise_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, 1])))
        g = noise_rng.standard_normal(size=(N, n, C))
        scores = stable_softmax(spec.sharpness * onehot + spec.noise * g)
    context = np.zeros((N, spec.context_count))
    context[np.arange(N), d.contexts] = 1.0
    width = len(str(N - 1))
    return MultimodalDataset(
        scores=scores,
        labels=d.labels,
        modality_names=spec.modality_names,
        context=context,
        ids=tuple(f"s{i:0{width}d}" for i in range(N)),
    )


def vote_records(dataset: MultimodalDataset) -> list[VoteRecord]:
    """Recover each sample's votes and context from a vote-mode dataset."""
    votes, contexts = _votes_and_contexts(dataset)
    return [
        VoteRecord(tuple(int(v) for v in votes[i]), int(contexts[i]), int(dataset.labels[i]))
        for i in range(dataset.size)
    ]


def _votes_and_contexts(dataset: MultimodalDataset) -> tuple[np.ndarray, np.ndarray]:
    if dataset.context is None:
        raise InvalidInputError("dataset has no context features to recover contexts from")
    return np.argmax(dataset.scores, axis=2), np.argmax(dataset.context, axis=1)


def _require_vote(spec: SynthSpec) -> None:
    if spec.mode != "vote":
        raise UnsupportedModeError(f"the Bayes oracle exists only for vote mode, not {spec.mode!r}")


def _log_posterior(votes: np.ndarray, contexts: np.ndarray, spec: SynthSpec) -> np.ndarray:
    """Unnormalised log posterior over classes, shape ``(N, C)``."""
    C = spec.class_count
    r = spec.r[:, contexts].T  # (N, n)
    hit = np.log(r)
    miss = np.log((1.0 - r) / (C - 1))
    classes = np.arange(C)
    match = votes[:, :, None] == classes[None, None, :]  # (N, n, C)
    return np.where(match, hit[:, :, None], miss[:, :, None]).sum(axis=1)


def bayes_posterior(votes: VoteRecord | Sequence[int], spec: SynthSpec, context: int | None = None) -> np.ndarray:
    """Exact class posterior given every expert's vote and the context.

    Label and context priors are uniform, so the posterior is the normalised
    product of per-expert vote likelihoods.
    """
    _require_vote(spec)
    if isinstance(votes, VoteRecord):
        context = votes.context
        votes = votes.votes
    if context is None:
        raise InvalidInputError("context is required")
    v = np.asarray(votes, dtype=np.int64)
    if v.shape != (spec.modality_count,):
        raise InvalidInputError(f"expected {spec.modality_count} votes, got {v.shape}")
    if v.min() < 0 or v.max() >= spec.class_count or not 0 <= context < spec.context_count:
        raise InvalidInputError("vote or context index out of range")
    return stable_softmax(_log_posterior(v[None, :], np.array([context]), spec))[0]


def bayes_predictions(dataset: MultimodalDataset, spec: SynthSpec) -> np.ndarray:
    _require_vote(spec)
    if dataset.modality_count != spec.modality_count or dataset.class_count != spec.class_count:
        raise InvalidInputError("dataset shape does not match the generator spec")
    votes, contexts = _votes_and_contexts(dataset)
    return np.argmax(_log_posterior(votes, contexts, spec), axis=1)


def bayes_accuracy(dataset: MultimodalDataset, spec: SynthSpec) -> float:
    """Accuracy of the exact posterior's argmax; no fusion rule can beat it in expectation."""
    pred = bayes_predictions(dataset, spec)
    return float(np.count_nonzero(pred == dataset.labels)) / dataset.size


def empirical_reliability(dataset: MultimodalDataset, spec: SynthSpec) -> np.ndarray:
    """Observed fraction of correct votes per (modality, context); NaN for unseen contexts."""
    votes, contexts = _votes_and_contexts(dataset)
    hits = votes == dataset.labels[:, None]
    out = np.full((spec.modality_count, spec.context_count), np.nan)
    for k in range(spec.context_count):
        mask = contexts == k
        if mask.any():
            out[:, k] = hits[mask].mean(axis=0)
    return out
