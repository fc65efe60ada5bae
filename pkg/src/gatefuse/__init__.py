"""Late fusion of per-modality expert scores.

Strategies: fixed simplex weights (with a grid sweep), plain averaging,
concatenation + linear softmax classifier, and a trainable MLP gate whose
softmax output weights the experts per sample. A synthetic generator with an
exact Bayes oracle provides ground truth.
"""

from .core import (
    ArtifactIOError,
    ConfigError,
    ConfusionMatrix,
    FusionError,
    InvalidInputError,
    MultimodalDataset,
    ParseError,
    SampleRecord,
    TrainingDivergedError,
    UnsupportedModeError,
    ValidationError,
    accuracy,
    argmax_label,
    confusion,
    log_loss,
    stable_softmax,
)
from .fusion import (
    LinearConcatModel,
    SweepGrid,
    SweepResult,
    SweepRow,
    enumerate_simplex_grid,
    fuse_average,
    fuse_concat_linear,
    fuse_weighted,
    run_weight_sweep,
    train_concat_linear,
)
from .gatenet import (
    EvalResult,
    GateMLP,
    Strategy,
    TrainConfig,
    TrainReport,
    evaluate,
    gate_forward,
    gate_input,
    gated_fuse,
    gradient_check,
    loss_and_grads,
    parse_strategy,
    split_indices,
    train_gate,
)
from .synth import (
    S_STAR,
    SynthSpec,
    VoteRecord,
    bayes_accuracy,
    bayes_posterior,
    generate,
    vote_records,
)

__version__ = "0.1.0"
