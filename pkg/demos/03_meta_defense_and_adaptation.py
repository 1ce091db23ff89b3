# %% [markdown]
# # Meta-training a defense, then adapting it online
#
# The defender picks the trimming fraction, clipping norm, noise and
# post-clip of its aggregation pipeline every round.  It is meta-trained
# against a prior over two attacks and later adapted against an attack it
# never saw.

# %%
import numpy as np

from metastack.env import EnvConfig, FLGame
from metastack.game import AttackTypeSpec, TypePrior
from metastack.meta import MetaConfig, make_sampler, meta_sl, online_adapt
from metastack.rng import Streams

game = FLGame(EnvConfig(horizon=15), seed=1)
prior = TypePrior(((AttackTypeSpec(0, "untargeted", 0, 4, "ipm", params={"eps": 10.0}), 0.5),
                   (AttackTypeSpec(1, "untargeted", 0, 4, "adaptive"), 0.5)))
cfg = MetaConfig(N_D=40, N_b=16, N_A=5, eta=0.05, kappa_D=0.05, seed=1)


def log(state, rec):
    if rec.iteration % 10 == 0:
        print(f"iter {rec.iteration:>3}  residual {rec.defender_residual:.3f}  "
              f"defender reward {rec.extra['rD_mean']:.3f}")


state = meta_sl(cfg, prior, game, callback=log)

# %% [markdown]
# An unseen attack: explicit boosting of a sign-flipped update by 5x.

# %%
unseen = AttackTypeSpec(9, "untargeted", 0, 4, "eb", params={"boost": 5.0})
sampler = make_sampler(game, unseen)
adapted, steps = online_adapt(state.theta, sampler, 5, cfg.eta, 32, Streams(1).child("adapt"))
for th, name in ((state.theta, "meta-policy"), (adapted, "adapted")):
    batch = sampler(th, None, 32, Streams(1).get("eval"))
    print(f"{name:<12} return {batch.returns().mean():.3f}  acc {np.mean(batch.info['clean_acc']):.3f}")
