"""
Following one run slot by slot
==============================

A short trace shows the mechanics: an SU update while a PU packet waits
turns into a relay in the next slot, and a fresh PU arrival resets the
PU age.
"""

from crn_aoi import ModelParams, SimConfig, rvi_solve, trace

params = ModelParams(p=0.5, k=0.5, c_e=8, delta=20)
_, policy = rvi_solve(params, lam=0.9)

names = {1: "update", 2: "silent", 3: "relay"}
print("  t  a_p a_s lam_p lam_s  action  cost  charge")
for r in trace(policy, params, SimConfig(seed=4), 25):
    print(f"{r.t:3d}  {r.a_p:3d} {r.a_s:3d} {r.lam_p:5d} {r.lam_s:5d}  {names[r.action]:6s} {r.cost:5.1f}  {r.charge:5.1f}")
