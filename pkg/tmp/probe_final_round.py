"""Single-rep look at the 95% round: does longer retraining close the gap,
and does a gentler 90->92.5->95 split help?"""
import sys, time
sys.path.insert(0, "src")
import numpy as np
from dataclasses import replace
from muprune import (
    CriterionConfig, MlpModel, TrainConfig, apply_mask, derive_seed,
    evaluate, get_flat_params, iterative_prune, load_mnist, select_prune_set,
    score, train, train_with_trace, pseudo_bootstrap_sigma, prunable_partition,
    set_flat_params, SplitSpec, train_validation_split, PruneMask,
)

tr_pool = load_mnist("data/mnist-6k", "train")
test = load_mnist("data/mnist-6k", "test")
split = SplitSpec(train=5400, validation=600, balanced=True,
                  seed=derive_seed(20210917, 9000))
train_ds, val_ds = train_validation_split(tr_pool, split)

rep_seed = derive_seed(20210917, 0)
base_cfg = TrainConfig(epochs=60, batch_size=100, optimizer="rmsprop",
                       learning_rate=1e-3, seed=derive_seed(rep_seed, 2))
model = MlpModel.initialized([784, 128, 64, 10], "logits",
                             seed=derive_seed(rep_seed, 1))
t0 = time.time()
_, trace = train_with_trace(model, train_ds, base_cfg, capacity=200)
sigma = pseudo_bootstrap_sigma(trace)
base_acc = evaluate(model, test).accuracy
print(f"base acc {base_acc:.4f}  ({time.time()-t0:.0f}s)", flush=True)
base_flat = get_flat_params(model)
partition = prunable_partition(model)

crit = CriterionConfig(kind="mu", lambda_star=1.0, uncertainty=sigma)
train_cfg = replace(base_cfg, seed=derive_seed(rep_seed, 4))

# --- variant 1: standard schedule to 90%, then stretch the last round ---
m = MlpModel.initialized([784, 128, 64, 10], "logits", seed=0)
set_flat_params(m, base_flat)
mask, hist = iterative_prune(
    m, train_ds, [(50.0, 30), (60.0, 30), (50.0, 30)], crit, train_cfg,
    partition=partition, test_data=test, trace_capacity=200,
)
print(f"at 90%: acc {hist[-1].test_accuracy:.4f} "
      f"(drop {(hist[-1].test_accuracy-base_acc)*100:+.2f}pp)", flush=True)
# final round by hand: prune 50% of survivors, retrain long, checkpoints
sv = score(get_flat_params(m), crit, partition, prior_keep=mask.keep)
mask95 = select_prune_set(sv, partition, 50.0, prior_mask=mask)
apply_mask(m, mask95)
cfg_round = replace(train_cfg, epochs=10, seed=derive_seed(train_cfg.seed, 4))
for chunk in range(9):
    train(m, train_ds, replace(cfg_round, seed=derive_seed(cfg_round.seed, chunk)),
          mask=mask95)
    acc = evaluate(m, test).accuracy
    print(f"  95% after {(chunk+1)*10} retrain epochs: "
          f"{acc:.4f} (drop {(acc-base_acc)*100:+.2f}pp)", flush=True)

# --- variant 2: split the last round 90 -> 92.5 -> 95, 30 epochs each ---
m2 = MlpModel.initialized([784, 128, 64, 10], "logits", seed=0)
set_flat_params(m2, base_flat)
mask2, hist2 = iterative_prune(
    m2, train_ds, [(50.0, 30), (60.0, 30), (50.0, 30), (25.0, 30), (33.3333333333333, 30)],
    crit, train_cfg, partition=partition, test_data=test, trace_capacity=200,
)
acc2 = hist2[-1].test_accuracy
frac = 1.0 - mask2.keep[np.concatenate(partition)].mean()
print(f"split final rounds: acc {acc2:.4f} (drop {(acc2-base_acc)*100:+.2f}pp) "
      f"pruned fraction {frac:.4f}", flush=True)
print("total", time.time() - t0)
