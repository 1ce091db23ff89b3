import numpy as np
import pytest
from hypothesis import settings

from metastack.env import EnvConfig, FLGame
from metastack.game import AttackTypeSpec, TypePrior

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg():
    return EnvConfig(horizon=4, n_eval=120, n_root=60)


@pytest.fixture(scope="session")
def small_game(small_cfg):
    return FLGame(small_cfg, seed=7)


@pytest.fixture(scope="session")
def untargeted_adaptive():
    return AttackTypeSpec(0, "untargeted", 0, 4, "adaptive")


@pytest.fixture(scope="session")
def ipm_type():
    return AttackTypeSpec(1, "untargeted", 0, 4, "ipm", params={"eps": 10.0})


@pytest.fixture(scope="session")
def backdoor_type():
    trig = [1.5] + [0.0] * 9
    return AttackTypeSpec(2, "backdoor", 3, 0, "eb", trigger=trig, target_label=0, lambda_mix=0.5,
                          params={"boost": 2.0})


@pytest.fixture(scope="session")
def mixed_type():
    trig = [0.0] * 9 + [1.5]
    return AttackTypeSpec(3, "mixed", 2, 2, "adaptive", trigger=trig, target_label=1, lambda_mix=0.3)


@pytest.fixture(scope="session")
def two_type_prior(untargeted_adaptive, ipm_type):
    return TypePrior(((untargeted_adaptive, 0.5), (ipm_type, 0.5)))
