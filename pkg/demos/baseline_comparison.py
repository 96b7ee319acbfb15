"""
Optimal policy against the zero-wait baseline
=============================================

The baseline updates whenever the PU is idle and never relays.  Both
policies are simulated on the same arrival streams across a range of PU
arrival probabilities.
"""

import numpy as np

from crn_aoi import ModelParams, SimConfig, baseline_policy, compare, convergence_log, rvi_solve

cfg = SimConfig(horizon=200_000, replications=10, seed=1)
grid = [ModelParams(p=p, k=0.5, c_e=8, delta=60) for p in np.round(np.arange(0.1, 1.0, 0.2), 2)]

print(" p    proposed  baseline  improvement")
for r in compare(grid, cfg, lam=0.9):
    print(f"{r.p:.1f}  {r.cost_proposed:8.3f}  {r.cost_baseline:8.3f}  {100 * r.improvement_ratio:6.1f}%")

# %%
# Running averages settle within a few thousand slots.
params = grid[2]
_, proposed = rvi_solve(params, 0.9)
for name, pol in (("proposed", proposed), ("baseline", baseline_policy(params))):
    log = convergence_log(pol, params, cfg, points=6)
    print(name, " ".join(f"{t}:{c:.3f}" for t, c in log))
