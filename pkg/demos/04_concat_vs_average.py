"""Concatenate expert scores and learn a linear softmax classifier on top.

Run: python3 demos/04_concat_vs_average.py
"""

from gatefuse import S_STAR, SynthSpec, evaluate, generate, split_indices, train_concat_linear

for name, spec in [
    ("S* (context-dependent reliability)", S_STAR),
    ("two steady experts", SynthSpec(class_count=10, reliability=((0.7,), (0.8,)), sample_count=5000, seed=7)),
]:
    data = generate(spec)
    train_idx, hold_idx = split_indices(data.size, 0.25, 0)
    train, hold = data.subset(train_idx), data.subset(hold_idx)
    model = train_concat_linear(train, epochs=500, lr=0.5, seed=0)
    print(name)
    print(f"  average  {evaluate(hold, 'average').accuracy:.4f}")
    print(f"  concat   {evaluate(hold, 'concat', concat_model=model).accuracy:.4f}  (final train loss {model.final_loss:.3f})")

# The classifier only sees scores, not the context, so on S* it cannot tell
# which expert to trust. Where the experts disagree, it can only learn a
# fixed preference.
