# %% [markdown]
# # Checking the gradient estimators against exact enumeration
#
# The 2-state, 2-action, horizon-2 MDP has only 16 trajectories, so its
# value, gradient and adapted objective can be computed exactly.  Monte Carlo
# estimates should sit within a few standard errors of those numbers.

# %%
import numpy as np

from metastack.diagnostics import grad_check_suite
from metastack.estimators import pg_estimate
from metastack.rng import Streams
from metastack.toy import ToyMDP

toy = ToyMDP()
theta = toy.policy(np.array([0.3, -0.2, 0.5, 0.1]))
print("exact J     ", toy.exact_J(theta.flat))
print("exact grad  ", np.round(toy.exact_grad(theta.flat), 5))

# %%
for n in (100, 1_000, 10_000, 100_000):
    g = pg_estimate(toy.sample(theta, None, n, Streams(0).get("pg", n)), theta)
    z = np.abs(g.vector - toy.exact_grad(theta.flat)) / g.se
    print(f"N = {n:>7}  estimate {np.round(g.vector, 4)}  max|z| {z.max():.2f}")

# %% [markdown]
# The full suite adds the Hessian estimator (against finite differences of
# the exact gradient) and the one-step meta-gradient.

# %%
report = grad_check_suite(seed=0, n_traj=50_000, n_meta=5_000)
print(report.table())
