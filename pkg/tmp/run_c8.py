import json, os, sys, time
sys.path.insert(0, "/root/pkg/src")
from muprune import ExperimentConfig, TrainConfig, run_experiment, emit_outputs, summarize

cfg = ExperimentConfig(
    dataset={"kind": "mnist", "dir": "/root/pkg/data/mnist-6k",
             "train": 5400, "validation": 600},
    widths=[784, 128, 64, 10],
    train=TrainConfig(epochs=60, batch_size=100, optimizer="rmsprop",
                      learning_rate=1e-3, seed=0),
    retrain_epochs=30,
    levels=[50.0, 80.0, 90.0, 95.0],
    criteria=["abs", "mu_pboot"],
    repetitions=10,
    seed=20210917,
    lambda_star={"mu_pboot": 1.0},
    trace_window=200,
)
t0 = time.time()
res = run_experiment(cfg, progress=lambda m: print(m, flush=True))
print("wall", time.time() - t0)
print("failures:", res.failures)
emit_outputs(res, "/root/pkg/tmp/c8_out")
for s in summarize(res.rows):
    print(s)
