"""Full R=10 verification of the frozen criterion-8 grid config."""
import sys
import time

sys.path.insert(0, "/root/pkg/tests")
sys.path.insert(0, "/root/pkg/src")

from muprune import emit_outputs, run_experiment, summarize
from test_acceptance import desk_grid_config

t0 = time.time()
result = run_experiment(desk_grid_config())
elapsed = time.time() - t0
paths = emit_outputs(result, "/root/pkg/tmp/c8_final")
print(f"grid done in {elapsed:.0f}s, failures={len(result.failures)}, rows={len(result.rows)}")

summ = {(s.criterion, s.level): s for s in summarize(result.rows)}
for crit in ("abs", "mu_pboot"):
    for lv in (50.0, 80.0, 90.0, 95.0):
        s = summ[(crit, lv)]
        print(f"  {crit:8s} L{lv:5.1f} drop {s.mean_drop*100:+.2f}pp (se {0 if s.se_drop is None else s.se_drop*100:.2f})")

ok_a = all(summ[(c, 95.0)].mean_drop * 100 > -2.0 for c in ("abs", "mu_pboot"))
levels = (50.0, 80.0, 90.0, 95.0)
better = sum(summ[("mu_pboot", lv)].mean_drop >= summ[("abs", lv)].mean_drop for lv in levels)
wins = sum(summ[("mu_pboot", lv)].wins_vs_abs for lv in levels)
losses = sum(summ[("mu_pboot", lv)].losses_vs_abs for lv in levels)
ties = sum(summ[("mu_pboot", lv)].ties_vs_abs for lv in levels)
print(f"8a: both under 2pp at 95%? {ok_a}")
print(f"8b: mu better on {better}/4 levels; paired wins {wins} losses {losses} ties {ties} -> {wins/40:.0%}")
print(f"8b pass: {better >= 3 or wins / 40 >= 0.55}")
