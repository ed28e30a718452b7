"""Why divide by uncertainty at all? Because |w| depends on your units.

Suppose feature 0 arrives in units 1024x larger (a power of two, so the
arithmetic below is exact). A model computing the identical function
just divides feature 0's outgoing weights by 1024 -- and its training
wobble divides with them, because the whole trajectory re-expresses the
same way. We build that twin directly and watch what each ranking does:

  abs    ranks the rescaled row at the bottom and kills it outright
  wald   |w| / sigma: both parts carry the units, ranking exactly stable
  mu     |w| / (lambda + sigma): here the lambda floor, which tracks
         the layer's overall weight scale rather than any one feature's
         units, ends up dominating the rescaled row's shrunken sigma --
         so against a units change this extreme, mu sides with abs

Run: python3 demos/03_units_and_ranking.py   (~5 s)
"""

import numpy as np

from muprune import (
    CriterionConfig,
    Dataset,
    MlpModel,
    TrainConfig,
    UncertaintyMap,
    evaluate,
    get_flat_params,
    make_rng,
    prunable_partition,
    pseudo_bootstrap_sigma,
    score,
    select_prune_set,
    set_flat_params,
    synth_blobs,
    train_with_trace,
)

FACTOR = 1024.0
HIDDEN = 12
ROW0 = np.arange(HIDDEN)  # flat indices of feature 0's outgoing weights

data = synth_blobs(400, 6, 3, make_rng(12), spread=0.8)
model = MlpModel.initialized([6, HIDDEN, 3], "logits", seed=21)
cfg = TrainConfig(epochs=80, batch_size=40, optimizer="rmsprop",
                  learning_rate=5e-3, seed=21)
_, trace = train_with_trace(model, data, cfg, capacity=200)
sigma = pseudo_bootstrap_sigma(trace)

# the twin: same function, feature 0 measured in the larger unit
twin_inputs = data.inputs.copy()
twin_inputs[:, 0] *= FACTOR
twin_data = Dataset(twin_inputs, data.labels, name="blobs-rescaled")
twin = model.copy()
flat = get_flat_params(twin)
flat[ROW0] /= FACTOR
set_flat_params(twin, flat)
twin_sigma_values = sigma.sigma.copy()
twin_sigma_values[ROW0] /= FACTOR
twin_sigma = UncertaintyMap(twin_sigma_values, sigma.method)

same = np.array_equal(model.forward(data.inputs), twin.forward(twin_inputs))
print(f"twin computes bit-identical outputs: {same}")
print(f"accuracy {evaluate(model, data).accuracy:.3f} either way\n")

criteria = [
    ("abs", lambda s: CriterionConfig(kind="abs")),
    ("wald", lambda s: CriterionConfig(kind="wald", uncertainty=s)),
    ("mu(1)", lambda s: CriterionConfig(kind="mu", lambda_star=1.0, uncertainty=s)),
]

print(f"{'criterion':>9}  feature-0 weights kept at 50% pruning")
for name, make in criteria:
    kept = []
    for m, s in ((model, sigma), (twin, twin_sigma)):
        part = prunable_partition(m)
        keep = select_prune_set(score(get_flat_params(m), make(s), part),
                                part, 50.0).keep
        kept.append(int(keep[ROW0].sum()))
    note = "identical ranking" if kept[0] == kept[1] else "units changed the outcome"
    print(f"{name:>9}  base {kept[0]:2d}/12   twin {kept[1]:2d}/12   <- {note}")

print("""
Same network, same function, different bookkeeping -- and magnitude
pruning changes its mind. Dividing by sigma removes exactly that
sensitivity. The lambda floor deliberately re-introduces a layer-scale
anchor: it guards weights whose sigma is near zero from mechanical
immortality, at the price of some units-sensitivity when lambda_star
is large and the unit change this lopsided.""")
