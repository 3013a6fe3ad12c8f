# %% [markdown]
# # Conditional rank probability on the truncated Gaussian model
#
# Z is standard normal truncated to [-1, 1] and X | Z = z is N(z, 1).
# We estimate P(X1 <= X2 | Z1 = z1, Z2 = z2) with the kernel-weighted
# U-statistic and compare against the closed form Phi((z2 - z1) / sqrt 2).

# %%
import numpy as np
from scipy.stats import norm

from condustat import bounds as bnd
from condustat.asymptotics import get_model
from condustat.estimator import estimate_theta_batch
from condustat.functionals import builtin_functional
from condustat.harness import generate_sample
from condustat.kernels import epanechnikov

model = get_model("paper-sec4")
rank = builtin_functional("rank_prob")
sample = generate_sample(model, 2000, seed=1)
h = 2000 ** -0.2

# %%
queries = np.array([[0.3, -0.3], [0.0, 0.0], [-0.5, 0.5]])[:, :, None]
estimates = estimate_theta_batch(sample, rank, epanechnikov(1), h, queries)
for q, est in zip(queries[:, :, 0], estimates):
    truth = norm.cdf((q[1] - q[0]) / np.sqrt(2))
    print(f"z = {q}, estimate {est.value:.4f}, truth {truth:.4f}, N_2 = {est.nk:.4f}")

# %% [markdown]
# ## How large must n be before the estimator exists?
#
# The existence bound is a lower bound on P(N_2 > 0) at a fixed bandwidth.

# %%
consts = bnd.derive_constants(bnd.worked_example_constants())
print(f"C1 = {consts.c1:.6f}, C2 = {consts.c2}")
for n in (300, 651, 1130):
    print(n, round(bnd.existence_probability(consts, n, 0.2).clamped, 4))
print("smallest n with bound >= 0.99:", bnd.min_sample_size_for_existence(consts, 0.2, 0.99))
print("closed-form threshold:", round(bnd.closed_form_existence_threshold(0.2), 4))
