"""Hand-written gate gradients compared with central differences.

Run: python3 demos/03_gradient_check.py
"""

import numpy as np

from gatefuse import GateMLP, SampleRecord, gradient_check, loss_and_grads
from gatefuse.gatenet import random_gradcheck_case

rng = np.random.Generator(np.random.Philox(123))
for trial in range(5):
    net, sample = random_gradcheck_case(rng)
    print(f"trial {trial}: n={net.expert_count} in={net.input_dim} hidden={net.hidden_dim}"
          f"  max rel error {gradient_check(net, sample):.2e}")

# Two experts that agree: the loss does not depend on the gate at all.
x = np.array([0.6, 0.3, 0.1])
same = SampleRecord("same", 0, {"a": x, "b": x})
net = GateMLP.random(6, 4, 2, rng, scale=1.0)
_, grads = loss_and_grads(net, same)
print("identical experts, largest |gradient|:", max(np.abs(p).max() for p in grads.params()))

# Step size trade-off: too large is truncation error, too small is rounding.
net, sample = random_gradcheck_case(rng)
for h in (1e-2, 1e-4, 1e-5, 1e-7, 1e-9):
    print(f"h={h:.0e}  error {gradient_check(net, sample, h=h):.2e}")
