"""Text persistence for datasets, sweeps, reports, checkpoints and run configs.

Every float is written with Python's shortest round-trip ``repr`` so that
reloading reproduces the exact bit pattern. Output files carry a ``meta``
block (seed, config hash, command) so a result can be traced to its inputs.

Dataset files are line-delimited JSON: a header object on the first line,
then one record per sample::

    {"format": "gatefuse-dataset", "format_version": "1", "class_count": 3,
     "modality_names": ["rgb", "flow"], "context_dim": 0}
    {"id": "a", "label": 2, "scores": {"rgb": [0.1, 0.2, 0.7], "flow": [...]}}

A header with ``"normalize": "softmax"`` marks logit-valued scores, which are
passed through a softmax on load.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np

from .core import (
    ArtifactIOError,
    ConfigError,
    InvalidInputError,
    MultimodalDataset,
    ParseError,
    ValidationError,
    is_probability,
    stable_softmax,
)
from .fusion import LinearConcatModel, SweepResult, SweepRow
from .gatenet import EvalResult, GateMLP, TrainConfig, TrainReport
from .synth import SynthSpec

DATASET_FORMAT = "gatefuse-dataset"
CHECKPOINT_FORMAT = "gatefuse-checkpoint"
REPORT_FORMAT = "gatefuse-report"
FORMAT_VERSION = "1"
SEED_ENV = "GATEFUSE_SEED"


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ArtifactIOError(exc.strerror or str(exc), str(path)) from exc


def _read_text(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ArtifactIOError(exc.strerror or str(exc), str(path)) from exc


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


# --- datasets -------------------------------------------------------------


def save_dataset(dataset: MultimodalDataset, path, meta: Mapping[str, Any] | None = None) -> None:
    header = {
        "format": DATASET_FORMAT,
        "format_version": FORMAT_VERSION,
        "class_count": dataset.class_count,
        "modality_names": list(dataset.modality_names),
        "context_dim": dataset.context_dim,
    }
    if meta:
        header["meta"] = dict(meta)
    lines = [_dumps(header)]
    scores = dataset.scores.tolist()
    context = None if dataset.context is None else dataset.context.tolist()
    for i in range(dataset.size):
        rec = {
            "id": dataset.ids[i],
            "label": int(dataset.labels[i]),
            "scores": {m: scores[i][j] for j, m in enumerate(dataset.modality_names)},
        }
        if context is not None:
            rec["context"] = context[i]
        lines.append(_dumps(rec))
    _write_text(path, "\n".join(lines) + "\n")


_HEADER_KEYS = {"format", "format_version", "class_count", "modality_names", "context_dim", "normalize", "meta"}
_RECORD_KEYS = {"id", "label", "scores", "context"}


def _float_list(value, length: int, what: str, lineno: int, path) -> list[float]:
    if not isinstance(value, list) or len(value) != length:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise ParseError(f"{what} must be a list of {length} numbers, got {got}", lineno, str(path))
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ParseError(f"{what} must contain only numbers", lineno, str(path))
    return [float(v) for v in value]


def read_dataset_header(path) -> dict:
    text = _read_text(path)
    first = text.split("\n", 1)[0]
    return _parse_header(first, path)


def _parse_header(line: str, path) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"header is not valid JSON ({exc.msg})", 1, str(path)) from None
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise ParseError(f"first line must be a {DATASET_FORMAT!r} header", 1, str(path))
    unknown = set(header) - _HEADER_KEYS
    if unknown:
        raise ParseError(f"unknown header keys {sorted(unknown)}", 1, str(path))
    if header.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {header.get('format_version')!r}", 1, str(path))
    C = header.get("class_count")
    names = header.get("modality_names")
    D = header.get("context_dim", 0)
    if not isinstance(C, int) or C < 2:
        raise ParseError("class_count must be an integer >= 2", 1, str(path))
    if not isinstance(names, list) or not names or not all(isinstance(m, str) for m in names):
        raise ParseError("modality_names must be a non-empty list of strings", 1, str(path))
    if len(set(names)) != len(names):
        raise ParseError("modality_names must be distinct", 1, str(path))
    if not isinstance(D, int) or D < 0:
        raise ParseError("context_dim must be a non-negative integer", 1, str(path))
    if header.get("normalize") not in (None, "softmax"):
        raise ParseError(f"unsupported normalize flag {header['normalize']!r}", 1, str(path))
    return header


def load_dataset(path) -> MultimodalDataset:
    """Read and validate a dataset file.

    Raises:
        ParseError: malformed header or record; the message names the line.
        ValidationError: scores are not probability vectors and the header
            does not ask for softmax normalisation.
    """
    lines = _read_text(path).split("\n")
    header = _parse_header(lines[0], path)
    C, names, D = header["class_count"], header["modality_names"], header.get("context_dim", 0)
    normalize = header.get("normalize") == "softmax"

    ids, labels, scores, context = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"record is not valid JSON ({exc.msg})", lineno, str(path)) from None
        if not isinstance(rec, dict):
            raise ParseError("record must be a JSON object", lineno, str(path))
        unknown = set(rec) - _RECORD_KEYS
        if unknown:
            raise ParseError(f"unknown record keys {sorted(unknown)}", lineno, str(path))
        if not isinstance(rec.get("id"), str):
            raise ParseError("record id must be a string", lineno, str(path))
        label = rec.get("label")
        if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < C:
            raise ParseError(f"label must be an integer in [0, {C})", lineno, str(path))
        sc = rec.get("scores")
        if not isinstance(sc, dict) or set(sc) != set(names):
            raise ParseError(f"scores must map exactly the modalities {names}", lineno, str(path))
        row = [_float_list(sc[m], C, f"scores[{m!r}]", lineno, path) for m in names]
        if normalize:
            row = stable_softmax(np.array(row)).tolist()
        elif not is_probability(np.array(row)):
            raise ValidationError(
                f"{path}:line {lineno}: scores are not probability vectors "
                f"(set \"normalize\": \"softmax\" in the header for logit exports)"
            )
        if D:
            context.append(_float_list(rec.get("context"), D, "context", lineno, path))
        elif "context" in rec:
            raise ParseError("context given but header declares context_dim 0", lineno, str(path))
        ids.append(rec["id"])
        labels.append(label)
        scores.append(row)
    if not ids:
        raise ParseError("dataset has no records", None, str(path))
    return MultimodalDataset(
        scores=np.array(scores),
        labels=np.array(labels),
        modality_names=tuple(names),
        context=np.array(context) if D else None,
        ids=tuple(ids),
    )


# --- sweep tables ----------------------------------------------------------


def _meta_lines(meta: Mapping[str, Any] | None) -> list[str]:
    return [f"# {k}: {v}" for k, v in (meta or {}).items()]


def _format_sweep(
    result: SweepResult, gating: EvalResult | None, meta: Mapping[str, Any] | None
) -> str:
    buf = _io.StringIO()
    for line in _meta_lines({"step": repr(result.step), **(meta or {})}):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"w_{m}" for m in result.modality_names] + ["accuracy", "mean_log_loss"])
    for row in result.rows:
        writer.writerow([f"{w:.6f}" for w in row.weights] + [repr(row.accuracy), repr(row.mean_log_loss)])
    if gating is not None:
        blanks = [""] * (len(result.modality_names) - 1)
        writer.writerow(["gating"] + blanks + [repr(gating.accuracy), repr(gating.mean_log_loss)])
    return buf.getvalue()


def save_sweep(
    result: SweepResult,
    path,
    gating: EvalResult | None = None,
    meta: Mapping[str, Any] | None = None,
) -> None:
    """Write the sweep as CSV, one row per grid point, optionally closed by a ``gating`` row.

    Leading ``#`` lines hold metadata.
    """
    _write_text(path, _format_sweep(result, gating, meta))


@dataclass
class SweepTable:
    result: SweepResult
    gating_accuracy: float | None
    gating_log_loss: float | None
    meta: dict


def load_sweep(path) -> SweepTable:
    text = _read_text(path)
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = value
        elif line:
            body.append(line)
    reader = csv.reader(body)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("sweep file has no header", None, str(path)) from None
    n = len(header) - 2
    if n < 1 or header[-2:] != ["accuracy", "mean_log_loss"] or not all(h.startswith("w_") for h in header[:n]):
        raise ParseError("unexpected sweep header", None, str(path))
    try:
        step = float(meta["step"])
    except (KeyError, ValueError):
        raise ParseError("sweep file lacks a '# step:' line", None, str(path)) from None
    K = round(1.0 / step)
    rows, g_acc, g_ll = [], None, None
    for cells in reader:
        if cells[0] == "gating":
            g_acc, g_ll = float(cells[-2]), float(cells[-1])
            continue
        weights = np.array([round(float(c) * K) / K for c in cells[:n]])
        rows.append(SweepRow(weights, float(cells[-2]), float(cells[-1])))
    result = SweepResult(rows=tuple(rows), modality_names=tuple(h[2:] for h in header[:n]), step=step)
    return SweepTable(result, g_acc, g_ll, meta)


def append_gating_row(path, gating: EvalResult) -> None:
    """Close an existing sweep file with a ``gating`` row, replacing any earlier one."""
    table = load_sweep(path)
    meta = {k: v for k, v in table.meta.items() if k != "step"}
    _write_text(path, _format_sweep(table.result, gating, meta))


# --- training reports -------------------------------------------------------


def save_report(report: TrainReport, path, meta: Mapping[str, Any] | None = None) -> None:
    doc = {"format": REPORT_FORMAT, "format_version": FORMAT_VERSION, "report": asdict(report)}
    if meta:
        doc["meta"] = dict(meta)
    _write_text(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")


def load_report(path) -> TrainReport:
    doc = _load_json_doc(path, REPORT_FORMAT)
    try:
        return TrainReport(**doc["report"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed report: {exc}", None, str(path)) from None


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(
    model: GateMLP | LinearConcatModel,
    path,
    config: TrainConfig | None = None,
    modality_names=None,
    holdout_fraction: float | None = None,
    meta: Mapping[str, Any] | None = None,
) -> None:
    """Write a gate (or concat classifier) as one JSON document, matrices row-major."""
    if isinstance(model, GateMLP):
        doc = {
            "format": CHECKPOINT_FORMAT,
            "format_version": FORMAT_VERSION,
            "kind": "gate_mlp",
            "dims": {"input_dim": model.input_dim, "hidden_dim": model.hidden_dim, "expert_count": model.expert_count},
            "params": {name: getattr(model, name).tolist() for name in ("W1", "b1", "W2", "b2")},
        }
        if config is not None:
            doc["config"] = config.to_dict()
            doc["seed"] = config.seed
    elif isinstance(model, LinearConcatModel):
        doc = {
            "format": CHECKPOINT_FORMAT,
            "format_version": FORMAT_VERSION,
            "kind": "linear_concat",
            "dims": {"class_count": model.class_count, "expert_count": model.modality_count},
            "params": {"weight": model.weight.tolist(), "bias": model.bias.tolist()},
            "training": {
                "epochs": model.epochs,
                "learning_rate": model.learning_rate,
                "l2": model.l2,
                "final_loss": model.final_loss,
            },
            "seed": model.seed,
        }
    else:
        raise InvalidInputError(f"cannot checkpoint {type(model).__name__}")
    if modality_names is not None:
        doc["modality_names"] = list(modality_names)
    if holdout_fraction is not None:
        doc["holdout_fraction"] = holdout_fraction
    if meta:
        doc["meta"] = dict(meta)
    _write_text(path, json.dumps(doc, indent=1, allow_nan=False) + "\n")


@dataclass
class Checkpoint:
    model: GateMLP | LinearConcatModel
    config: TrainConfig | None
    modality_names: tuple[str, ...] | None
    holdout_fraction: float | None
    meta: dict


def load_checkpoint(path) -> Checkpoint:
    doc = _load_json_doc(path, CHECKPOINT_FORMAT)
    try:
        p = doc["params"]
        if doc["kind"] == "gate_mlp":
            model = GateMLP(W1=p["W1"], b1=p["b1"], W2=p["W2"], b2=p["b2"])
            dims = doc["dims"]
            if (model.input_dim, model.hidden_dim, model.expert_count) != (
                dims["input_dim"], dims["hidden_dim"], dims["expert_count"]
            ):
                raise ParseError("parameter shapes disagree with dims", None, str(path))
        elif doc["kind"] == "linear_concat":
            t = doc["training"]
            model = LinearConcatModel(
                weight=np.array(p["weight"], dtype=np.float64),
                bias=np.array(p["bias"], dtype=np.float64),
                epochs=t["epochs"],
                learning_rate=t["learning_rate"],
                seed=doc["seed"],
                l2=t["l2"],
                final_loss=t["final_loss"],
            )
        else:
            raise ParseError(f"unknown checkpoint kind {doc['kind']!r}", None, str(path))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed checkpoint: {exc}", None, str(path)) from None
    config = TrainConfig.from_dict(doc["config"]) if "config" in doc else None
    names = tuple(doc["modality_names"]) if "modality_names" in doc else None
    return Checkpoint(
        model=model,
        config=config,
        modality_names=names,
        holdout_fraction=doc.get("holdout_fraction"),
        meta=doc.get("meta", {}),
    )


def _load_json_doc(path, fmt: str) -> dict:
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON ({exc.msg})", exc.lineno, str(path)) from None
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise ParseError(f"not a {fmt!r} document", None, str(path))
    if doc.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {doc.get('format_version')!r}", None, str(path))
    return doc


# --- run configuration -------------------------------------------------------


@dataclass
class RunConfig:
    """Every tunable knob of a run, as one flat key-value document.

    Precedence, lowest first: defaults, the ``GATEFUSE_SEED`` environment
    variable (seed only), the config file, command-line flags.
    """

    seed: int = 0
    # synthetic data
    class_count: int = 10
    reliability: list = field(default_factory=lambda: [[0.95, 0.55], [0.55, 0.95]])
    sample_count: int = 8000
    mode: str = "vote"
    sharpness: float = 3.0
    noise: float = 0.5
    modality_names: list | None = None
    # gate training
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    init_scale: float = 0.1
    hidden_dim: int = 32
    gate_mode: str = "per_sample"
    holdout: float = 0.25
    # concat-linear baseline
    concat_epochs: int = 500
    concat_lr: float = 0.5
    l2: float = 0.0
    # sweep / evaluation / gradient check
    step: float = 0.1
    n_jobs: int = 1
    strategy: str = "average"
    trials: int = 20
    fd_step: float = 1e-5
    # paths
    dataset: str | None = None
    output: str | None = None
    checkpoint: str | None = None
    sweep_csv: str | None = None
    report: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            class_count=self.class_count,
            reliability=tuple(tuple(row) for row in self.reliability),
            sample_count=self.sample_count,
            seed=self.seed,
            mode=self.mode,
            sharpness=self.sharpness,
            noise=self.noise,
            modality_names=tuple(self.modality_names or ()),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            init_scale=self.init_scale,
            hidden_dim=self.hidden_dim,
            gate_mode=self.gate_mode,
        )


_CONFIG_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    kind = _CONFIG_TYPES[key]
    if value is None:
        if "None" in kind:
            return None
        raise ConfigError(f"{key} may not be null", key)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, str) and value.strip().lstrip("-").isdigit():
                return int(value)
            raise ConfigError(f"{key} must be an integer, got {value!r}", key)
        return value
    if kind == "float":
        if isinstance(value, bool):
            raise ConfigError(f"{key} must be a number, got {value!r}", key)
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {value!r}", key) from None
    if kind.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}", key)
        return value
    if key == "reliability":
        if isinstance(value, str):
            try:
                value = json.loads(value)
            except json.JSONDecodeError:
                raise ConfigError(f"reliability must be a JSON matrix, got {value!r}", key) from None
        if not (isinstance(value, list) and value and all(isinstance(r, list) and r for r in value)):
            raise ConfigError("reliability must be a non-empty list of lists", key)
        return [[float(v) for v in row] for row in value]
    if key == "modality_names":
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError("modality_names must be a list of strings", key)
        return value
    return value


def load_config(path=None, cli_overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge defaults, environment seed, an optional JSON file and CLI overrides.

    ``None`` values in ``cli_overrides`` mean "flag not given" and are skipped.

    Raises:
        ConfigError: unknown key (``.key`` names it) or a badly typed value.
    """
    merged: dict[str, Any] = {}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed not in (None, ""):
        merged["seed"] = env_seed
    if path is not None:
        text = _read_text(path)
        if text.strip():
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: config must be a flat key-value object")
            merged.update(doc)
    merged.update({k: v for k, v in (cli_overrides or {}).items() if v is not None})
    for key in merged:
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"unknown config key: {key}", key)
    return RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})


def save_config(config: RunConfig, path) -> None:
    _write_text(path, json.dumps(config.to_dict(), indent=2, allow_nan=False) + "\n")


def run_meta(config: RunConfig, command: str | None = None) -> dict:
    meta = {"seed": config.seed, "config_sha256": config.config_hash()}
    if command is not None:
        meta["command"] = command
    return meta
