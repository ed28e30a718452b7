"""R=3 probes of retrain lr / optimizer-state handling for the desk grid."""
import sys, time
sys.path.insert(0, "src")
import numpy as np
from muprune.experiment import ExperimentConfig, run_experiment, summarize
from muprune.train import TrainConfig

BASE = dict(
    dataset={"kind": "mnist", "dir": "/root/pkg/data/mnist-6k",
             "train": 5400, "validation": 600},
    widths=[784, 128, 64, 10],
    train=TrainConfig(epochs=60, batch_size=100, optimizer="rmsprop",
                      learning_rate=1e-3, seed=0),
    retrain_epochs=30,
    levels=[50.0, 80.0, 90.0, 95.0],
    criteria=["abs", "mu_pboot"],
    repetitions=3,
    seed=20210917,
    lambda_star={"mu_pboot": 1.0},
    trace_window=200,
    iterative=True,
)

PROBES = {
    "A_reset_lr1e-3": {},
    "B_reset_lr3e-4": {"retrain_learning_rate": 3e-4},
    "C_reset_lr1e-4": {"retrain_learning_rate": 1e-4},
    "D_carry_lr1e-3": {"carry_optimizer_state": True},
    "E_carry_lr3e-4": {"carry_optimizer_state": True, "retrain_learning_rate": 3e-4},
}

for name, extra in PROBES.items():
    cfg = ExperimentConfig(**{**BASE, **extra})
    t0 = time.time()
    res = run_experiment(cfg)
    rows = res.rows
    print(f"== {name}  ({time.time()-t0:.0f}s, failures={len(res.failures)})")
    summ = summarize(rows)
    wins = losses = ties = 0
    for s in summ:
        if s.criterion == "mu_pboot":
            wins += s.wins_vs_abs; losses += s.losses_vs_abs; ties += s.ties_vs_abs
    for s in summ:
        print(f"   {s.criterion:8s} L{s.level:4.0f} drop {s.mean_drop*100:+.2f}pp "
              f"(se {s.se_drop*100:.2f})")
    print(f"   paired: mu wins {wins} losses {losses} ties {ties}")
    sys.stdout.flush()
