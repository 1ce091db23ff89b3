# %% [markdown]
# # Robust aggregation under model poisoning
#
# A small synthetic federated task (20 clients, 10 features, 3 classes) is
# trained for 25 rounds with a fixed aggregation rule, first without an
# attacker and then against four malicious clients running IPM.

# %%
import numpy as np

from metastack.env import EnvConfig, FLGame
from metastack.game import AttackTypeSpec
from metastack.rng import Streams

game = FLGame(EnvConfig(horizon=25), seed=0)
ipm = AttackTypeSpec(0, "untargeted", 0, 4, "ipm", params={"eps": 10.0})

# %%
rules = ["mean", "tmean", "median", "krum", "fltrust"]
print(f"{'rule':<10}{'clean acc':>12}{'under IPM':>12}")
for rule in rules:
    accs = []
    for xi in (None, ipm):
        batch = game.rollout(None, None, xi, 8, Streams(0).get("demo", rule), defense=rule)
        accs.append(np.mean(batch.info["clean_acc"]))
    print(f"{rule:<10}{accs[0]:>12.3f}{accs[1]:>12.3f}")

# %% [markdown]
# Plain averaging collapses once the scaled, sign-flipped IPM update enters
# the mean.  Median and Krum hold up, as does FLTrust with its trusted root
# update.  The trimmed mean only cuts a fixed fraction per side, so part of
# the poison survives.

# %%
lmp = AttackTypeSpec(1, "untargeted", 0, 4, "lmp", params={"aggregator": "median"})
for rule in ("median", "tmean"):
    batch = game.rollout(None, None, lmp, 8, Streams(0).get("demo", "lmp", rule), defense=rule)
    print(f"LMP tuned for median, aggregated with {rule}: acc {np.mean(batch.info['clean_acc']):.3f}")
