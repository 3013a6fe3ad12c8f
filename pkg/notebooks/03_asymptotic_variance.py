# %% [markdown]
# # Limiting variance at one query and its Monte Carlo check

# %%
import numpy as np

from condustat.asymptotics import get_model, h_matrix, rho_squared
from condustat.functionals import builtin_functional
from condustat.kernels import epanechnikov

model = get_model("paper-sec4")
rank = builtin_functional("rank_prob")
kern = epanechnikov(1)

exact = rho_squared(model, rank, kern, [0.3, -0.3])
mc = rho_squared(model, rank, kern, [0.3, -0.3], mode="mc", reps=100_000, seed=3)
print(f"rho^2 quadrature {exact.rho_sq:.6f}, Monte Carlo {mc.rho_sq:.6f} +/- {mc.stderr[0, 0]:.6f}")

# %% [markdown]
# Queries that share a coordinate are correlated; disjoint ones are not.

# %%
queries = np.array([[0.3, -0.3], [0.3, 0.5], [-0.8, 0.8]])
print(np.round(h_matrix(model, rank, kern, queries).value, 5))

# %% [markdown]
# The empirical spread of sqrt(n h) (theta_hat - theta) at n = 5000 can be
# compared with rho through the normality experiment.

# %%
if __name__ == "__main__":
    from condustat.harness import default_config, run_experiment

    rep = run_experiment(default_config("normality", reps=40, asym_reps=20_000))
    for check in rep.checks:
        print(check.line())
