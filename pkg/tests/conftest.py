import numpy as np
import pytest
from omegaconf import DictConfig, OmegaConf

from tcavoidsrc.common.utils import builtin_config
from tcavoidsrc.kinematics.chain import SerialChain
from tcavoidsrc.world.scene import Workspace


@pytest.fixture
def desk_config() -> DictConfig:
    return builtin_config("desk")


@pytest.fixture
def small_config(desk_config: DictConfig, tmp_path) -> DictConfig:
    """Desk config with tiny networks and short episodes."""
    overrides = {
        "save_path": str(tmp_path / "model"),
        "perception": {"latent_size": 16, "channels": [4, 4, 4], "mlp_hidden": 32},
        "rl": {"hidden": [32, 32], "n_envs": 2, "rollout_steps": 8, "minibatch_size": 8, "epochs": 1},
        "pretraining": {"episodes": 1, "episode_steps": 3, "epochs": 1, "batch_size": 2},
        "bench": {"trials": 2, "timeout_steps": 15},
    }
    return OmegaConf.merge(desk_config, overrides)


@pytest.fixture
def desk_chain(desk_config: DictConfig) -> SerialChain:
    return SerialChain.from_config(desk_config.chain)


@pytest.fixture
def desk_workspace(desk_config: DictConfig) -> Workspace:
    return Workspace.from_config(desk_config.workspace)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
