"""Fixed-weight sweep over two modalities.

Two experts, one correct 70% of the time and one 80%, fused with every
weight pair on a 0.1 grid. Run: python3 demos/01_weight_sweep.py
"""

import numpy as np

from gatefuse import SynthSpec, generate, run_weight_sweep

# Hard votes: each expert emits a smoothed one-hot. The fused argmax just
# follows whichever expert carries more weight, so accuracy is a step.
vote = SynthSpec(class_count=10, reliability=((0.7,), (0.8,)), sample_count=5000, seed=7)
print("vote mode")
for row in run_weight_sweep(generate(vote), 0.1).rows:
    print(f"  z = ({row.weights[0]:.1f}, {row.weights[1]:.1f})  accuracy {row.accuracy:.4f}")

# Soft scores carry confidence. Now a mixed weight beats either expert alone.
soft = SynthSpec(class_count=10, reliability=((0.7,), (0.8,)), sample_count=5000, seed=7, mode="soft", noise=1.0)
result = run_weight_sweep(generate(soft), 0.1)
print("soft mode (noise 1.0)")
for row in result.rows:
    bar = "#" * int(round((row.accuracy - 0.6) * 200))
    print(f"  z = ({row.weights[0]:.1f}, {row.weights[1]:.1f})  accuracy {row.accuracy:.4f}  {bar}")

best = result.best
print("best weights", np.round(best.weights, 1), "accuracy", best.accuracy)
print("endpoints", result.rows[0].accuracy, result.rows[-1].accuracy)
