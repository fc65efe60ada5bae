"""A learned gate against fixed weights when the better modality depends on context.

Modality m0 is reliable in context 0, m1 in context 1. No single weight
vector can follow that switch; a gate that sees the context can.
Run: python3 demos/02_gating.py
"""

import time

import numpy as np

from gatefuse import S_STAR, TrainConfig, bayes_accuracy, evaluate, generate, run_weight_sweep, split_indices, train_gate

data = generate(S_STAR)
print(f"{data.size} samples, {data.class_count} classes, modalities {data.modality_names}")

config = TrainConfig()
start = time.perf_counter()
net, report = train_gate(data, config, holdout_fraction=0.25)
print(f"trained {config.epochs} epochs in {time.perf_counter() - start:.1f}s")
print("loss every 40 epochs:", np.round(report.epoch_losses[::40], 4))

_, hold = split_indices(data.size, 0.25, config.seed)
holdout = data.subset(hold)

sweep = run_weight_sweep(holdout, 0.1)
print(f"best fixed weights {sweep.best.weights} -> {sweep.best.accuracy:.4f}")
print(f"average            -> {evaluate(holdout, 'average').accuracy:.4f}")
gated = evaluate(holdout, "gated", net=net)
print(f"gate               -> {gated.accuracy:.4f}")
print(f"Bayes oracle       -> {bayes_accuracy(holdout, S_STAR):.4f}")

# The gate's weights flip with the context.
context = holdout.context.argmax(axis=1)
for k in range(2):
    sub = holdout.subset(np.flatnonzero(context == k))
    z = evaluate(sub, "gated", net=net).mean_gate_weights
    print(f"context {k}: mean gate weights m0 {z[0]:.3f}  m1 {z[1]:.3f}")
