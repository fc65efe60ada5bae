"""Command-line entry point: ``gatefuse {synth,sweep,train-gate,eval,gradcheck}``.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage or config error.
Results go to files and stdout; progress goes to stderr.
"""

from __future__ import annotations

import argparse
import shlex
import sys
import time
from typing import Callable, Sequence

from . import io
from .core import ConfigError, FusionError, InvalidInputError
from .fusion import SweepGrid, run_weight_sweep, train_concat_linear
from .gatenet import (
    GateMLP,
    evaluate,
    loss_and_grads,
    parse_strategy,
    run_gradcheck,
    split_indices,
    train_gate,
)
from .synth import empirical_reliability, generate

GRADCHECK_TOL = 1e-4
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _usage(fn: Callable, *args, **kwargs):
    """Run a constructor/validator, turning bad-argument errors into usage errors."""
    try:
        return fn(*args, **kwargs)
    except (InvalidInputError, ConfigError) as exc:
        raise UsageError(str(exc)) from exc


def _config(args, keys: Sequence[str]):
    overrides = {k: getattr(args, k, None) for k in keys}
    return io.load_config(args.config, overrides)


def _require(config, key: str) -> str:
    value = getattr(config, key)
    if not value:
        raise UsageError(f"missing required path: --{key.replace('_', '-')}")
    return value


def _fmt_weights(weights) -> str:
    return "(" + ", ".join(f"{w:.6f}" for w in weights) + ")"


def cmd_synth(args) -> int:
    config = _config(
        args,
        ["seed", "class_count", "reliability", "sample_count", "mode", "sharpness", "noise", "modality_names", "output"],
    )
    out = _require(config, "output")
    spec = _usage(config.synth_spec)
    dataset = generate(spec)
    io.save_dataset(dataset, out, meta={**io.run_meta(config, args.command_line), "config": config.to_dict()})
    print(f"wrote {out}")
    print(f"N={dataset.size} C={dataset.class_count} n={dataset.modality_count} K={spec.context_count}")
    rel = empirical_reliability(dataset, spec)
    for j, name in enumerate(dataset.modality_names):
        cells = " ".join(f"k{k}={rel[j, k]:.4f}" for k in range(spec.context_count))
        print(f"reliability {name}: {cells}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config(args, ["seed", "dataset", "step", "n_jobs", "sweep_csv"])
    path = _require(config, "dataset")
    out = _require(config, "sweep_csv")
    dataset = io.load_dataset(path)
    grid = _usage(SweepGrid, step=config.step, n=dataset.modality_count)
    _progress(f"sweeping {len(grid)} weight vectors over {dataset.size} samples")
    result = run_weight_sweep(dataset, grid, n_jobs=config.n_jobs)
    io.save_sweep(result, out, meta=io.run_meta(config, args.command_line))
    best = result.best
    print(f"wrote {out} ({len(result.rows)} rows)")
    print(f"best fixed weights {_fmt_weights(best.weights)} accuracy {best.accuracy:.6f}")
    return EXIT_OK


_TRAIN_KEYS = [
    "seed", "dataset", "checkpoint", "report", "learning_rate", "momentum", "epochs",
    "batch_size", "init_scale", "hidden_dim", "gate_mode", "holdout",
]


def cmd_train_gate(args) -> int:
    config = _config(args, _TRAIN_KEYS)
    path = _require(config, "dataset")
    ckpt = _require(config, "checkpoint")
    train_config = _usage(config.train_config)
    if not 0.0 <= config.holdout < 1.0:
        raise UsageError(f"holdout must lie in [0, 1), got {config.holdout}")
    dataset = io.load_dataset(path)
    _progress(f"training gate on {dataset.size} samples, {train_config.epochs} epochs")
    start = time.perf_counter()
    net, report = train_gate(dataset, train_config, holdout_fraction=config.holdout)
    _progress(f"trained in {time.perf_counter() - start:.1f}s, final loss {report.epoch_losses[-1]:.6f}")
    meta = {**io.run_meta(config, args.command_line), "config": config.to_dict()}
    io.save_checkpoint(net, ckpt, config=train_config, modality_names=dataset.modality_names,
                       holdout_fraction=config.holdout, meta=meta)
    if config.report:
        io.save_report(report, config.report, meta=meta)
    print(f"wrote {ckpt}")
    print(f"train accuracy {report.train_accuracy:.6f}")
    if report.holdout_accuracy is not None:
        print(f"holdout accuracy {report.holdout_accuracy:.6f}")
    weights = report.holdout_mean_gate_weights or report.train_mean_gate_weights
    for name, w in zip(dataset.modality_names, weights):
        print(f"mean gate weight {name}: {w:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config(
        args, ["seed", "dataset", "strategy", "checkpoint", "sweep_csv", "holdout", "concat_epochs", "concat_lr", "l2"]
    )
    path = _require(config, "dataset")
    strategy = _usage(parse_strategy, config.strategy)
    if strategy.kind == "gated" and not config.checkpoint:
        raise UsageError("strategy 'gated' needs --checkpoint")
    dataset = io.load_dataset(path)

    net = None
    seed, holdout = config.seed, config.holdout
    if strategy.kind == "gated":
        ckpt = io.load_checkpoint(config.checkpoint)
        if not isinstance(ckpt.model, GateMLP):
            raise UsageError(f"{config.checkpoint} is not a gate checkpoint")
        net = ckpt.model
        if ckpt.config is not None:
            seed = ckpt.config.seed
        if ckpt.holdout_fraction is not None:
            holdout = ckpt.holdout_fraction

    train_part, test_part = dataset, dataset
    if args.holdout_only:
        train_idx, hold_idx = _usage(split_indices, dataset.size, holdout, seed)
        if hold_idx.size == 0:
            raise UsageError("--holdout-only needs a positive holdout fraction")
        train_part, test_part = dataset.subset(train_idx), dataset.subset(hold_idx)

    concat_model = None
    if strategy.kind == "concat":
        concat_model = _usage(
            train_concat_linear,
            train_part, epochs=config.concat_epochs, lr=config.concat_lr, seed=config.seed, l2=config.l2,
        )
    result = _usage(evaluate, test_part, strategy, net=net, concat_model=concat_model)

    print(f"strategy {result.strategy}")
    print(f"samples {test_part.size}")
    print(f"accuracy {result.accuracy:.6f}")
    print(f"mean log-loss {result.mean_log_loss:.6f}")
    if result.mean_gate_weights is not None:
        for name, w in zip(dataset.modality_names, result.mean_gate_weights):
            print(f"mean gate weight {name}: {w:.6f}")
    print("confusion (rows = true, columns = predicted):")
    for row in result.confusion.to_list():
        print("  " + " ".join(f"{c:5d}" for c in row))
    if config.sweep_csv and args.append_gating:
        io.append_gating_row(config.sweep_csv, result)
        print(f"appended gating row to {config.sweep_csv}")
    return EXIT_OK


def _corrupted_grads(net, sample):
    loss, grads = loss_and_grads(net, sample)
    grads.b2 = grads.b2 + 1e-2
    return loss, grads


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError(f"trials must be at least 1, got {args.trials}")
    if not args.fd_step > 0:
        raise UsageError(f"finite-difference step must be positive, got {args.fd_step}")
    grad_fn = _corrupted_grads if args.corrupt_gradient else loss_and_grads
    start = time.perf_counter()
    errors = run_gradcheck(seed=args.seed, trials=args.trials, h=args.fd_step, grad_fn=grad_fn)
    worst = max(errors)
    _progress(f"{args.trials} trials in {time.perf_counter() - start:.2f}s")
    print(f"max relative error {worst:.3e} over {args.trials} trials (seed {args.seed})")
    ok = worst < GRADCHECK_TOL
    print("PASS" if ok else f"FAIL (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_FAILURE


def _reliability_arg(text: str):
    try:
        return io._coerce("reliability", text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatefuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p):
        p.add_argument("--config", help="flat JSON key-value config file; flags override it")
        p.add_argument("--seed", type=int, help=f"random seed (default from ${io.SEED_ENV}, else 0)")

    p = sub.add_parser("synth", help="generate a synthetic multimodal dataset")
    common(p)
    p.add_argument("--output", "-o", help="dataset file to write")
    p.add_argument("--class-count", type=int, dest="class_count")
    p.add_argument("--reliability", type=_reliability_arg,
                   help="JSON n x K matrix, e.g. '[[0.95,0.55],[0.55,0.95]]'")
    p.add_argument("--sample-count", type=int, dest="sample_count")
    p.add_argument("--mode", choices=["vote", "soft"])
    p.add_argument("--sharpness", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--modality-names", dest="modality_names", help="comma-separated")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="evaluate every fixed weight vector on a simplex grid")
    common(p)
    p.add_argument("--dataset", "-d")
    p.add_argument("--step", type=float, help="grid spacing; 1/step must be an integer (default 0.1)")
    p.add_argument("--n-jobs", type=int, dest="n_jobs")
    p.add_argument("--output", "-o", dest="sweep_csv", help="sweep CSV to write")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-gate", help="train the gating network")
    common(p)
    p.add_argument("--dataset", "-d")
    p.add_argument("--checkpoint", help="checkpoint file to write")
    p.add_argument("--report", help="training report (JSON) to write")
    p.add_argument("--lr", "--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--init-scale", type=float, dest="init_scale")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--gate-mode", choices=["per_sample", "constant"], dest="gate_mode")
    p.add_argument("--holdout", type=float, help="held-out fraction (default 0.25)")
    p.set_defaults(func=cmd_train_gate)

    p = sub.add_parser("eval", help="evaluate one fusion strategy")
    common(p)
    p.add_argument("--dataset", "-d")
    p.add_argument("--strategy", "-s", help="fixed:w1,w2,... | average | concat | gated")
    p.add_argument("--checkpoint", help="gate checkpoint (required for 'gated')")
    p.add_argument("--holdout", type=float)
    p.add_argument("--holdout-only", action="store_true",
                   help="evaluate on the held-out split only (gated: the split recorded in the checkpoint)")
    p.add_argument("--concat-epochs", type=int, dest="concat_epochs")
    p.add_argument("--concat-lr", type=float, dest="concat_lr")
    p.add_argument("--l2", type=float)
    p.add_argument("--sweep-csv", dest="sweep_csv", help="sweep CSV to append a 'gating' row to")
    p.add_argument("--append-gating", action="store_true", help="append this result to --sweep-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic gate gradients with finite differences")
    p.add_argument("--seed", type=int, default=123)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--fd-step", type=float, default=1e-5, dest="fd_step")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.command_line = "gatefuse " + shlex.join(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"gatefuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FusionError as exc:
        print(f"gatefuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except FloatingPointError as exc:
        print(f"gatefuse {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
