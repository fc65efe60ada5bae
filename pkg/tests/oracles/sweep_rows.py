"""Pin per-row sweep accuracies by brute force.

Fuses every sample with plain Python float arithmetic (no numpy, no package
fusion code) and counts argmax hits per grid point. The dataset itself comes
from the package generator; only the sweep is re-derived here.

Run: python tests/oracles/sweep_rows.py
"""

from fractions import Fraction

from gatefuse.synth import SynthSpec, generate

CASES = {
    "vote_k1": SynthSpec(class_count=10, reliability=((0.7,), (0.8,)), sample_count=5000, seed=7, mode="vote"),
    "soft_noise1": SynthSpec(
        class_count=10, reliability=((0.7,), (0.8,)), sample_count=5000, seed=7, mode="soft", noise=1.0
    ),
}


def brute_sweep(dataset, K=10):
    rows = []
    records = dataset.samples
    for k in range(K, -1, -1):
        z0, z1 = k / K, (K - k) / K
        hits = 0
        for rec in records:
            x0, x1 = (list(map(float, v)) for v in rec.expert_scores.values())
            y = [z0 * a + z1 * b for a, b in zip(x0, x1)]
            best = 0
            for c in range(1, len(y)):
                if y[c] > y[best]:
                    best = c
            hits += best == rec.label
        rows.append(((z0, z1), Fraction(hits, len(records))))
    return rows


if __name__ == "__main__":
    for name, spec in CASES.items():
        print(name)
        for w, acc in brute_sweep(generate(spec)):
            print(f"    {w}: {acc.numerator}/{acc.denominator} = {float(acc)!r}")
