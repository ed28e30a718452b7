"""R=10 check of schedule H: cap every round's relative cut near 50%."""
import dataclasses
import sys
import time

sys.path.insert(0, "/root/pkg/tests")
sys.path.insert(0, "/root/pkg/src")

from muprune import emit_outputs, run_experiment, summarize
from test_acceptance import desk_grid_config

cfg = dataclasses.replace(
    desk_grid_config(),
    round_levels=[50.0, 65.0, 80.0, 90.0, 92.5, 94.0, 95.0],
)
t0 = time.time()
result = run_experiment(cfg)
print(f"grid done in {time.time()-t0:.0f}s, failures={len(result.failures)}")
emit_outputs(result, "/root/pkg/tmp/c8_h")

summ = {(s.criterion, s.level): s for s in summarize(result.rows)}
levels = (50.0, 80.0, 90.0, 95.0)
for crit in ("abs", "mu_pboot"):
    for lv in levels:
        s = summ[(crit, lv)]
        print(f"  {crit:8s} L{lv:5.1f} drop {s.mean_drop*100:+.3f}pp (se {(s.se_drop or 0)*100:.2f})")
wins = sum(summ[("mu_pboot", lv)].wins_vs_abs for lv in levels)
losses = sum(summ[("mu_pboot", lv)].losses_vs_abs for lv in levels)
better = sum(summ[("mu_pboot", lv)].mean_drop >= summ[("abs", lv)].mean_drop for lv in levels)
ok_a = all(summ[(c, 95.0)].mean_drop * 100 > -2.0 for c in ("abs", "mu_pboot"))
print(f"8a pass: {ok_a}; 8b: {better}/4 levels, wins {wins}/40 ({wins/40:.0%}) "
      f"-> pass {better >= 3 or wins / 40 >= 0.55}")
