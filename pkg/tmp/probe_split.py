"""R=3 probe: iterative grid with an extra 92.5% stop before 95%."""
import sys, time
sys.path.insert(0, "src")
from muprune.experiment import ExperimentConfig, run_experiment, summarize
from muprune.train import TrainConfig

for name, extra in {
    "F_split92.5_ep30": dict(),
    "G_split92.5_94_ep30": dict(round_levels=[50.0, 80.0, 90.0, 92.5, 94.0, 95.0]),
}.items():
    cfg = ExperimentConfig(
        dataset={"kind": "mnist", "dir": "/root/pkg/data/mnist-6k",
                 "train": 5400, "validation": 600},
        widths=[784, 128, 64, 10],
        train=TrainConfig(epochs=60, batch_size=100, optimizer="rmsprop",
                          learning_rate=1e-3, seed=0),
        retrain_epochs=30,
        levels=[50.0, 80.0, 90.0, 95.0],
        round_levels=extra.get("round_levels", [50.0, 80.0, 90.0, 92.5, 95.0]),
        criteria=["abs", "mu_pboot"],
        repetitions=3,
        seed=20210917,
        lambda_star={"mu_pboot": 1.0},
        trace_window=200,
        iterative=True,
    )
    t0 = time.time()
    res = run_experiment(cfg)
    print(f"== {name} ({time.time()-t0:.0f}s, failures={len(res.failures)})")
    wins = losses = ties = 0
    for s in summarize(res.rows):
        if s.criterion == "mu_pboot":
            wins += s.wins_vs_abs; losses += s.losses_vs_abs; ties += s.ties_vs_abs
        print(f"   {s.criterion:8s} L{s.level:4.0f} drop {s.mean_drop*100:+.2f}pp "
              f"(se {s.se_drop*100:.2f})")
    print(f"   paired: mu wins {wins} losses {losses} ties {ties}")
    sys.stdout.flush()
