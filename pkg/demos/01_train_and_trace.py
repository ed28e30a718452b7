"""Train a small classifier while recording the tail of its weight trajectory.

The wobble of each weight over the last stretch of SGD is the cheapest
uncertainty signal we have: no refits, no Hessians, just a ring buffer
observing the optimizer. This script trains on synthetic blobs, keeps
the last 200 iterates, and turns them into per-weight sigmas.

Run: python3 demos/01_train_and_trace.py
"""

import numpy as np

from muprune import (
    MlpModel,
    TrainConfig,
    WeightTrace,
    evaluate,
    get_flat_params,
    make_rng,
    pseudo_bootstrap_sigma,
    synth_blobs,
    train,
)

data = synth_blobs(600, 8, 4, make_rng(1), spread=0.9)
model = MlpModel.initialized([8, 16, 4], "logits", seed=2)
cfg = TrainConfig(epochs=60, batch_size=50, optimizer="rmsprop",
                  learning_rate=5e-3, seed=3)

print(f"dataset: {data.name}, {len(data)} examples, {model.param_count} parameters")
print(f"training for {cfg.total_iterations(len(data))} iterations, "
      f"tracing the last 200\n")

trace = WeightTrace(model.param_count, capacity=200)
report = train(model, data, cfg, hooks=[trace.observe])

for rec in report.epochs[::12] + [report.epochs[-1]]:
    print(f"  epoch {rec.epoch:3d}  mean loss {rec.train_loss:.4f}")

acc = evaluate(model, data).accuracy
print(f"\ntrain accuracy after {cfg.epochs} epochs: {acc:.3f}")

umap = pseudo_bootstrap_sigma(trace)
lo, hi = trace.window_iterations()[[0, -1]]
print(f"trace window: iterations {lo}..{hi} ({trace.observed_total} observed)")
print(f"sigma: min {umap.sigma.min():.2e}  median {np.median(umap.sigma):.2e}  "
      f"max {umap.sigma.max():.2e}")

# The interesting part: wobble is not proportional to size. Some large
# weights are still bouncing around; some small ones have settled.
w = np.abs(get_flat_params(model))
big = w >= np.quantile(w, 0.8)
print(f"mean sigma of largest-20% weights:  {umap.sigma[big].mean():.2e}")
print(f"mean sigma of smallest-80% weights: {umap.sigma[~big].mean():.2e}")
