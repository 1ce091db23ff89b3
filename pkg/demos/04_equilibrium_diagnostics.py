# %% [markdown]
# # Equilibrium diagnostics
#
# Strict competitiveness is checked on the federated game itself.  The PL
# and Lipschitz probes are shown on the closed-form quadratic stand-in, where
# the answers are known.

# %%
import warnings

import numpy as np

from metastack.diagnostics import QuadraticStandIn, SCWarning, lipschitz_probe, pl_probe, sc_check
from metastack.env import EnvConfig, FLGame
from metastack.game import AttackTypeSpec

game = FLGame(EnvConfig(horizon=10), seed=0)
types = [AttackTypeSpec(0, "untargeted", 0, 4, "ipm", params={"eps": 10.0}),
         AttackTypeSpec(1, "backdoor", 3, 0, "eb", trigger=[1.5] + [0.0] * 9, target_label=0, lambda_mix=1.0),
         AttackTypeSpec(2, "mixed", 2, 2, "eb", trigger=[0.0] * 9 + [1.5], target_label=1, lambda_mix=0.3)]
with warnings.catch_warnings():
    warnings.simplefilter("ignore", SCWarning)
    for xi in types:
        fit = sc_check(game, xi, 300, np.random.default_rng(xi.id))
        print(f"{xi.category:<11} c = {fit.c:+.4f}  d = {fit.d:+.4f}  max residual {fit.max_abs_residual:.2e}")

# %% [markdown]
# Untargeted attacks give an exactly zero-sum game (c = -1).  A pure
# backdoor with lambda = 1 shares the defender's objective (c = +1), and the
# mixed type is not affine at all.

# %%
stand_in = QuadraticStandIn(np.zeros(3), np.zeros(3), coupling=0.5)
pl = pl_probe(np.zeros(3), np.zeros(3), types[0], stand_in, 20, np.random.default_rng(0))
print("PL ratio", pl.ratio, pl.status)
for fn in ("L11", "L12", "L22", "L_V"):
    print(fn, round(lipschitz_probe(fn, np.zeros(3), np.zeros(3), types[0], stand_in, 20,
                                    np.random.default_rng(1)), 6))
