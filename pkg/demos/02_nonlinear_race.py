# %% [markdown]
# # Nonlinear race for y = (x'beta + 2)^2 + noise
#
# Machines fit local nonlinear least squares once. After that every round
# costs p + p^2 numbers per machine: H f and H fdot at the broadcast iterate.

# %%
import numpy as np

from racedc import (
    AdjustmentSpec, CovarianceSpec, NonlinearModelSpec, ProjectionSpec, gen_nonlinear_batches,
    nls_fit, race_nonlinear,
)
from racedc.aggregate import solver_residual_check
from racedc.baselines import aee_nonlinear, full_oracle
from racedc.datagen import shifted_square, shifted_square_jac
from racedc.local_estimators import shifted_square_init

beta = np.array([2.0, 1.0, -2.0, 0.0])
spec = NonlinearModelSpec(beta, noise_var=1.0, cov=CovarianceSpec("ar1", 0.5))
batches = gen_nonlinear_batches(spec, N=100, m=40, seed=3)
fits = [nls_fit(b, shifted_square, shifted_square_jac, shifted_square_init(b)) for b in batches]

# %%
est = race_nonlinear(batches, fits, shifted_square, shifted_square_jac,
                     AdjustmentSpec(), ProjectionSpec(R=50, seed=4), tol=1e-4)
print("outer iterations:", est.iterations)
print("estimating-equation residual:",
      f"{solver_residual_check(est, batches, shifted_square, shifted_square_jac):.2e}")

# %%
aee = aee_nonlinear(fits, batches, shifted_square_jac)
full = full_oracle(batches, "nls", f=shifted_square, grad_f=shifted_square_jac,
                   init=shifted_square_init)
for name, b in [("race", est.beta), ("AEE", aee.beta), ("full data", full.beta)]:
    print(f"{name:10s} {np.round(b, 4)}  sq. error {np.sum((b - beta) ** 2):.2e}")
