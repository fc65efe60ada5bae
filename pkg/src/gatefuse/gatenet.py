"""Trainable softmax gate over frozen experts.

A one-hidden-layer ReLU perceptron maps each sample's gate input (its expert
score vectors, concatenated, plus optional context features) to one logit
per expert. The logits go through :func:`~gatefuse.core.stable_softmax` and
the resulting simplex weights mix the experts' score vectors. Gradients are
written out by hand and checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .core import (
    LOG_EPS,
    ConfusionMatrix,
    InvalidInputError,
    MultimodalDataset,
    SampleRecord,
    TrainingDivergedError,
    batch_log_loss,
    confusion,
    mix_experts,
    stable_softmax,
)
from .fusion import LinearConcatModel, _concat_inputs, uniform_weights

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(eq=False)
class GateMLP:
    """Gate parameters. ``W1``: (H, D), ``b1``: (H,), ``W2``: (n, H), ``b2``: (n,)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        H, D = self.W1.shape
        n = self.W2.shape[0]
        if self.b1.shape != (H,) or self.W2.shape != (n, H) or self.b2.shape != (n,) or n < 1:
            raise InvalidInputError(
                f"inconsistent gate shapes W1={self.W1.shape} b1={self.b1.shape} "
                f"W2={self.W2.shape} b2={self.b2.shape}"
            )
        if not all(np.all(np.isfinite(p)) for p in self.params()):
            raise InvalidInputError("gate parameters must be finite")

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int, expert_count: int) -> "GateMLP":
        return cls(
            W1=np.zeros((hidden_dim, input_dim)),
            b1=np.zeros(hidden_dim),
            W2=np.zeros((expert_count, hidden_dim)),
            b2=np.zeros(expert_count),
        )

    @classmethod
    def random(
        cls, input_dim: int, hidden_dim: int, expert_count: int, rng: np.random.Generator, scale: float = 0.1
    ) -> "GateMLP":
        """Uniform(-scale, scale) initialisation, drawn in W1, b1, W2, b2 order."""
        return cls(
            W1=rng.uniform(-scale, scale, size=(hidden_dim, input_dim)),
            b1=rng.uniform(-scale, scale, size=hidden_dim),
            W2=rng.uniform(-scale, scale, size=(expert_count, hidden_dim)),
            b2=rng.uniform(-scale, scale, size=expert_count),
        )

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def expert_count(self) -> int:
        return self.W2.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "GateMLP":
        return GateMLP(*(p.copy() for p in self.params()))

    def identical_to(self, other: "GateMLP") -> bool:
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.params(), other.params())
        )


def gate_input(sample: SampleRecord) -> np.ndarray:
    """Expert score vectors in modality order, followed by the context features."""
    parts = [np.asarray(v, dtype=np.float64) for v in sample.expert_scores.values()]
    if not parts:
        raise InvalidInputError("sample has no expert scores")
    if len({p.shape for p in parts}) != 1 or parts[0].ndim != 1:
        raise InvalidInputError(f"sample {sample.id!r} has score vectors of unequal length")
    if sample.context is not None:
        parts.append(np.asarray(sample.context, dtype=np.float64).ravel())
    return np.concatenate(parts)


def gate_inputs(dataset: MultimodalDataset) -> np.ndarray:
    """Row-wise :func:`gate_input` for a whole dataset, shape ``(N, n*C + D_ctx)``."""
    X = dataset.scores.reshape(dataset.size, -1)
    if dataset.context is not None:
        X = np.concatenate([X, dataset.context], axis=1)
    return X


def gate_input_dim(dataset: MultimodalDataset) -> int:
    return dataset.modality_count * dataset.class_count + dataset.context_dim


def _hidden(net: GateMLP, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pre = X @ net.W1.T + net.b1
    return pre, np.maximum(pre, 0.0)


def gate_forward(net: GateMLP, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(logits, weights)`` for one gate input or a batch of them (rows)."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.shape[-1] != net.input_dim or X.ndim not in (1, 2):
        raise InvalidInputError(f"gate expects inputs of length {net.input_dim}, got shape {X.shape}")
    _, h = _hidden(net, X)
    logits = h @ net.W2.T + net.b2
    return logits, stable_softmax(logits)


def _check_sample(net: GateMLP, sample: SampleRecord) -> tuple[np.ndarray, np.ndarray]:
    x = gate_input(sample)
    scores = sample.scores
    if scores.shape[0] != net.expert_count or x.size != net.input_dim:
        raise InvalidInputError(
            f"sample {sample.id!r} has {scores.shape[0]} experts and gate input length {x.size}; "
            f"gate expects {net.expert_count} and {net.input_dim}"
        )
    return x, scores


def gated_fuse(net: GateMLP, sample: SampleRecord) -> tuple[np.ndarray, np.ndarray]:
    """Fused score vector and the gate weights that produced it."""
    x, scores = _check_sample(net, sample)
    _, z = gate_forward(net, x)
    return mix_experts(scores, z), z


def gated_fuse_dataset(net: GateMLP, dataset: MultimodalDataset) -> tuple[np.ndarray, np.ndarray]:
    X = gate_inputs(dataset)
    if dataset.modality_count != net.expert_count or X.shape[1] != net.input_dim:
        raise InvalidInputError(
            f"dataset has {dataset.modality_count} experts and gate input length {X.shape[1]}; "
            f"gate expects {net.expert_count} and {net.input_dim}"
        )
    _, Z = gate_forward(net, X)
    return mix_experts(dataset.scores, Z), Z


def _batch_loss_and_grads(
    net: GateMLP, X: np.ndarray, S: np.ndarray, labels: np.ndarray
) -> tuple[float, GateMLP, np.ndarray]:
    """Mean cross-entropy of the gated mixture over a batch, and its gradients.

    Returns ``(mean_loss, grads, per_sample_losses)``.
    """
    B = X.shape[0]
    rows = np.arange(B)
    pre, h = _hidden(net, X)
    logits = h @ net.W2.T + net.b2
    z = stable_softmax(logits)
    y = mix_experts(S, z)
    picked = y[rows, labels]
    losses = -np.log(np.maximum(picked, LOG_EPS))

    # dL/dy[label] = -1/y[label], zero where the clamp is active
    dpicked = np.where(picked > LOG_EPS, -1.0 / np.maximum(picked, LOG_EPS), 0.0)
    dz = dpicked[:, None] * S[rows, :, labels]
    # softmax Jacobian written as z_j * sum_k z_k (dz_j - dz_k): exactly zero when all dz agree
    dlogits = z * np.einsum("bk,bjk->bj", z, dz[:, :, None] - dz[:, None, :])
    dlogits /= B
    dh = dlogits @ net.W2
    dpre = dh * (pre > 0.0)
    grads = GateMLP(
        W1=dpre.T @ X,
        b1=dpre.sum(axis=0),
        W2=dlogits.T @ h,
        b2=dlogits.sum(axis=0),
    )
    return float(losses.mean()), grads, losses


def loss_and_grads(net: GateMLP, sample: SampleRecord) -> tuple[float, GateMLP]:
    """Cross-entropy ``-ln y[label]`` of one gated sample and its parameter gradients.

    The gradients come back packed in a :class:`GateMLP` of the same shapes.
    """
    x, scores = _check_sample(net, sample)
    loss, grads, _ = _batch_loss_and_grads(net, x[None, :], scores[None], np.array([sample.label]))
    return loss, grads


def sample_loss(net: GateMLP, sample: SampleRecord) -> float:
    y, _ = gated_fuse(net, sample)
    return float(-np.log(max(y[sample.label], LOG_EPS)))


def gradient_check(
    net: GateMLP,
    sample: SampleRecord,
    h: float = 1e-5,
    grad_fn: Callable[[GateMLP, SampleRecord], tuple[float, GateMLP]] = loss_and_grads,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Relative error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``grad_fn`` lets callers check an alternative gradient routine.
    """
    if not h > 0:
        raise InvalidInputError(f"finite-difference step must be positive, got {h}")
    _, analytic = grad_fn(net, sample)
    probe = net.copy()
    worst = 0.0
    for name in PARAM_NAMES:
        p = getattr(probe, name)
        a = getattr(analytic, name)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = sample_loss(probe, sample)
            p[idx] = orig - h
            down = sample_loss(probe, sample)
            p[idx] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(a[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(a[idx] - numeric) / denom)
    return worst


def random_gradcheck_case(rng: np.random.Generator) -> tuple[GateMLP, SampleRecord]:
    """A random gate and matching sample with small, varied dimensions."""
    n = int(rng.integers(2, 5))
    C = int(rng.integers(2, 6))
    D_ctx = int(rng.integers(0, 4))
    H = int(rng.integers(3, 9))
    experts = rng.dirichlet(np.ones(C), size=n)
    context = rng.normal(size=D_ctx) if D_ctx else None
    sample = SampleRecord(
        id="gradcheck",
        label=int(rng.integers(0, C)),
        expert_scores={f"m{j}": experts[j] for j in range(n)},
        context=context,
    )
    net = GateMLP.random(n * C + D_ctx, H, n, rng, scale=1.0)
    return net, sample


def run_gradcheck(
    seed: int = 123,
    trials: int = 20,
    h: float = 1e-5,
    grad_fn: Callable[[GateMLP, SampleRecord], tuple[float, GateMLP]] = loss_and_grads,
) -> list[float]:
    """Per-trial max relative errors over ``trials`` random (gate, sample) pairs."""
    if trials < 1:
        raise InvalidInputError(f"trials must be at least 1, got {trials}")
    rng = np.random.Generator(np.random.Philox(seed))
    errors = []
    for _ in range(trials):
        net, sample = random_gradcheck_case(rng)
        errors.append(gradient_check(net, sample, h=h, grad_fn=grad_fn))
    return errors


GATE_MODES = ("per_sample", "constant")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    init_scale: float = 0.1
    hidden_dim: int = 32
    gate_mode: str = "per_sample"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError(f"momentum must lie in [0, 1), got {self.momentum}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvalidInputError(f"epochs must be a positive integer, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be a positive integer, got {self.batch_size}")
        if int(self.hidden_dim) != self.hidden_dim or self.hidden_dim < 1:
            raise InvalidInputError(f"hidden_dim must be a positive integer, got {self.hidden_dim}")
        if not self.init_scale > 0:
            raise InvalidInputError(f"init_scale must be positive, got {self.init_scale}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.gate_mode not in GATE_MODES:
            raise InvalidInputError(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainReport:
    epoch_losses: list[float]
    train_accuracy: float
    holdout_accuracy: float | None
    seed: int
    train_mean_gate_weights: list[float]
    holdout_mean_gate_weights: list[float] | None = None
    train_size: int = 0
    holdout_size: int = 0
    holdout_fraction: float = 0.0
    config: dict = field(default_factory=dict)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (split, init, shuffle) generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.Philox(c)) for c in children)


def split_indices(size: int, holdout_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/holdout split; both index arrays come back sorted.

    Uses the same stream as :func:`train_gate`, so evaluating a checkpoint
    with the training seed and fraction reproduces its holdout set.
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise InvalidInputError(f"holdout fraction must lie in [0, 1), got {holdout_fraction}")
    if holdout_fraction == 0.0:
        return np.arange(size), np.arange(0)
    n_hold = int(round(size * holdout_fraction))
    if n_hold == 0 or n_hold == size:
        raise InvalidInputError(
            f"holdout fraction {holdout_fraction} leaves an empty split for {size} samples"
        )
    perm = _streams(seed)[0].permutation(size)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train_gate(
    dataset: MultimodalDataset, config: TrainConfig = TrainConfig(), holdout_fraction: float = 0.0
) -> tuple[GateMLP, TrainReport]:
    """Minibatch SGD with classical momentum on the gated mixture's cross-entropy.

    Experts stay frozen; only the gate learns. With ``gate_mode="constant"``
    every parameter except the output bias stays at zero, giving one learned
    weight vector shared by all samples.
    """
    train_idx, hold_idx = split_indices(dataset.size, holdout_fraction, config.seed)
    _, init_rng, shuffle_rng = _streams(config.seed)
    train = dataset.subset(train_idx)
    X = gate_inputs(train)
    S = np.asarray(train.scores)
    labels = np.asarray(train.labels)
    D = X.shape[1]
    n = dataset.modality_count

    if config.gate_mode == "constant":
        net = GateMLP.zeros(D, config.hidden_dim, n)
        trainable = {"b2"}
    else:
        net = GateMLP.random(D, config.hidden_dim, n, init_rng, scale=config.init_scale)
        trainable = set(PARAM_NAMES)
    velocity = {name: np.zeros_like(getattr(net, name)) for name in trainable}

    epoch_losses = []
    N = train.size
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(N)
        total = 0.0
        for start in range(0, N, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads, _ = _batch_loss_and_grads(net, X[batch], S[batch], labels[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            total += loss * batch.size
            for name in trainable:
                v = velocity[name]
                v *= config.momentum
                v -= config.learning_rate * getattr(grads, name)
                getattr(net, name)[...] += v
        epoch_losses.append(total / N)

    if not all(np.all(np.isfinite(p)) for p in net.params()):
        raise TrainingDivergedError("gate parameters became non-finite")

    train_eval = evaluate(train, "gated", net=net)
    report = TrainReport(
        epoch_losses=epoch_losses,
        train_accuracy=train_eval.accuracy,
        holdout_accuracy=None,
        seed=config.seed,
        train_mean_gate_weights=train_eval.mean_gate_weights.tolist(),
        train_size=int(train_idx.size),
        holdout_size=int(hold_idx.size),
        holdout_fraction=holdout_fraction,
        config=config.to_dict(),
    )
    if hold_idx.size:
        hold_eval = evaluate(dataset.subset(hold_idx), "gated", net=net)
        report.holdout_accuracy = hold_eval.accuracy
        report.holdout_mean_gate_weights = hold_eval.mean_gate_weights.tolist()
    return net, report


STRATEGY_KINDS = ("fixed", "average", "concat", "gated")


@dataclass(frozen=True)
class Strategy:
    kind: str
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidInputError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if self.kind == "fixed" and not self.weights:
            raise InvalidInputError("fixed strategy needs weights, e.g. 'fixed:0.5,0.5'")

    def __str__(self) -> str:
        if self.kind == "fixed":
            return "fixed:" + ",".join(repr(w) for w in self.weights)
        return self.kind


def parse_strategy(text: str | Strategy) -> Strategy:
    """Parse ``fixed:w1,w2,...``, ``average``, ``concat`` or ``gated``."""
    if isinstance(text, Strategy):
        return text
    kind, _, rest = text.strip().partition(":")
    if kind == "fixed":
        try:
            weights = tuple(float(w) for w in rest.split(","))
        except ValueError:
            raise InvalidInputError(f"cannot parse fixed weights in {text!r}") from None
        return Strategy("fixed", weights)
    if rest:
        raise InvalidInputError(f"strategy {kind!r} takes no arguments")
    return Strategy(kind)


@dataclass(frozen=True)
class EvalResult:
    strategy: str
    accuracy: float
    mean_log_loss: float
    confusion: ConfusionMatrix
    mean_gate_weights: np.ndarray | None = None


def evaluate(
    dataset: MultimodalDataset,
    strategy: str | Strategy,
    net: GateMLP | None = None,
    concat_model: LinearConcatModel | None = None,
) -> EvalResult:
    """Score a fusion strategy on a dataset.

    ``mean_gate_weights`` holds the per-modality weights averaged over samples
    for ``gated``, and the constant weights for ``fixed`` and ``average``.
    """
    strategy = parse_strategy(strategy)
    n = dataset.modality_count
    gates = None
    if strategy.kind in ("fixed", "average"):
        if strategy.kind == "average":
            z = uniform_weights(n)
        else:
            z = np.array(strategy.weights)
            if z.size != n:
                raise InvalidInputError(f"{z.size} fixed weights for {n} modalities")
            if np.any(z < 0) or abs(z.sum() - 1.0) > 1e-9:
                raise InvalidInputError(f"fixed weights must lie on the simplex, got {strategy.weights}")
        fused = mix_experts(dataset.scores, z)
        gates = z
    elif strategy.kind == "concat":
        if concat_model is None:
            raise InvalidInputError("concat strategy needs a trained LinearConcatModel")
        if concat_model.weight.shape != (dataset.class_count, n * dataset.class_count):
            raise InvalidInputError("concat model dimensions do not match the dataset")
        fused = concat_model.predict_proba(_concat_inputs(dataset))
    else:
        if net is None:
            raise InvalidInputError("gated strategy needs a GateMLP")
        fused, Z = gated_fuse_dataset(net, dataset)
        gates = Z.mean(axis=0)

    pred = np.argmax(fused, axis=1)
    return EvalResult(
        strategy=str(strategy),
        accuracy=float(np.count_nonzero(pred == dataset.labels)) / dataset.size,
        mean_log_loss=float(batch_log_loss(fused, dataset.labels).mean()),
        confusion=confusion(pred, dataset.labels, dataset.class_count),
        mean_gate_weights=gates,
    )

