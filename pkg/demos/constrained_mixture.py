"""
Meeting a PU age budget with a mixed policy
===========================================

The relay charge of the optimal policy falls in steps as the multiplier
grows, so an exact budget usually sits between two deterministic policies.
Mixing them once per episode hits it exactly.
"""

from crn_aoi import ModelParams, constraint_curve, policy_evaluation, robbins_monro_lambda, solve_cmdp

params = ModelParams(p=0.5, k=0.1, c_e=8, d=0.5, delta=6)

# %%
# The charge curve is a staircase, nonincreasing in the multiplier.
for pt in constraint_curve(params, [0, 0.01, 0.02, 0.03, 0.1, 0.5, 0.6, 2.0]):
    print(f"lambda={pt.lam:<5g} charge={pt.constraint_avg:.4f} cost={pt.avg_cost:.4f}")

# %%
# Bisection finds the step that crosses the budget; the mixing weight
# blends the policies on either side.
mix, report = solve_cmdp(params)
print(report.status)
print(f"lambda in [{report.lambda_low:.6f}, {report.lambda_high:.6f}], alpha={report.alpha:.4f}")
print(f"charge {policy_evaluation(mix).avg_constraint:.9f} against budget {params.d}")
print(f"primal {report.primal_estimate:.6f}, dual {report.dual_value:.6f}, gap {report.duality_gap:.2g}")

# %%
# A stochastic-approximation run on simulated charges drifts to the same
# multiplier without ever evaluating a policy exactly.
trace = robbins_monro_lambda(params, steps=200, horizon=10**5)
print("Robbins-Monro:", " ".join(f"{x:.4f}" for x in trace[::40]), "->", f"{trace[-1]:.4f}")

# %%
# A looser budget is already met without pricing the PU charge.
print(solve_cmdp(params.replace(d=1.0))[1].status)
