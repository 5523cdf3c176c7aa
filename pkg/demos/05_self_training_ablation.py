"""Run the full self-training ladder in four configurations and compare
them on held-out target images.

The four modes stack the pieces the earlier demos introduced one at a
time. `baseline` trains on source labels only. `st2` adds five
self-training rounds that consume the class-balanced pseudo-label ladder
(rho = 20 ..100), re-centring the decision boundary on the shifted
target. `st2_sck` keeps the rounds and adds the subcategory co-objective
during source training, which calibrates confidence at the price of a
softer boundary. `full` additionally pseudo-labels subcategories on the
target and filters every rung by cross-head disagreement.

The per-round trace for the full mode shows the ladder at work: early
rungs select few, nearly error-free labels; later rungs trade purity for
coverage while the disagreement filter drops the most contested pixels.

Runtime: four complete runs, a few minutes on one core.
"""

import time

from scast import RunConfig, parse_mode, run, validate

MODES = ("baseline", "st2", "st2_sck", "full")

cfg = validate(RunConfig(seed=0))
results = {}
for name in MODES:
    t0 = time.time()
    results[name] = run(cfg, parse_mode(name))
    print(f"ran {name:8s} in {time.time() - t0:5.1f}s")

print()
print("full-mode rounds (pseudo-label ladder on target train,"
      " F on target eval):")
print("  round  rho  selected  dropped  err_rate  f_score")
for row in results["full"].rows:
    if row["round"] == "final":
        continue
    print(f"  {row['round']:>5}  {row['rho']:>3}  {row['selected_bi']:>8d}"
          f"  {row['dropped']:>7d}  {row['err_rate']:8.4f}"
          f"  {row['f_score']:.4f}")

print()
print("final target-eval metrics by mode:")
print("  mode      precision  recall  f_score  entropy")
for name in MODES:
    row = results[name].rows[-1]
    print(f"  {name:8s}  {row['precision']:9.4f}  {row['recall']:.4f}"
          f"  {row['f_score']:.4f}  {row['entropy']:7.4f}")

base = results["baseline"].rows[-1]["f_score"]
st2 = results["st2"].rows[-1]["f_score"]
print()
print(f"self-training recovers most of the shift: F {base:.4f} -> {st2:.4f}")
print("the subcategory co-objective buys calibration (higher entropy above)")
print("at the price of a sliver of background precision -- on this small a")
print("world the three self-trained modes land within about a point of each")
print("other, with plain self-training usually on top and the disagreement")
print("filter clawing back part of what the co-objective spends.")
