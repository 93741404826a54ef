# %% [markdown]
# # Linear race on a sparse 30-dimensional design
#
# 4000 rows split over 200 machines, 20 rows each, so no machine can run OLS
# on its own (m < p). Each machine fits a cross-validated lasso, debiases it
# and ships p^2 + 2p numbers. The coordinator combines them.

# %%
import numpy as np

from racedc import (
    AdjustmentSpec, CovarianceSpec, LinearModelSpec, ProjectionSpec, dc_lasso,
    gen_linear_batches, lasso_cv_fit, race_linear, simple_average,
)
from racedc.baselines import adjusted_fits, full_oracle
from racedc.aggregate import default_threshold, threshold

beta = np.r_[3, 2, 1, 0.5, -2, np.zeros(25)]
spec = LinearModelSpec(beta, noise_var=4.0, cov=CovarianceSpec("ar1", 0.5))
batches = gen_linear_batches(spec, N=200, m=20, seed=1)
fits = [lasso_cv_fit(b, seed=1) for b in batches]

# %% [markdown]
# Race: residual-adjust each fit, project onto random directions, solve the
# projected regression, average over 50 draws of directions.

# %%
adj = AdjustmentSpec(k1=0.1, k2=0.1)
race = race_linear(batches, fits, adj, ProjectionSpec(R=50, seed=2))
av = simple_average(adjusted_fits(batches, fits, adj.k1))
dc = dc_lasso(fits)
full = full_oracle(batches, "lasso", cv_seed=1)

for name, b in [("race", race.beta), ("AV", av.beta), ("DC-lasso", dc.beta),
                ("full data", full.beta)]:
    print(f"{name:10s} sq. error {np.sum((b - beta) ** 2):.4f}   first five {np.round(b[:5], 3)}")

# %% [markdown]
# Hard thresholding at sqrt(log p / n) removes some of the noise coordinates.

# %%
t = default_threshold(30, 4000)
hard = threshold(race, t, "hard")
print(f"t = {t:.4f}: {np.sum(hard.beta[5:] == 0)} of 25 null coefficients set to 0")
