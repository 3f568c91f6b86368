"""Shared fixtures: the bundled three-machine case and one trained agent.

The training configuration is pinned here (short episodes, exact eigenvalue
mode, small gain bound) so the whole suite stays inside a desktop runtime
budget.  The values mirror configs/case3.toml.
"""

from importlib import resources

import numpy as np
import pytest

from oscdamp import grid
from oscdamp.config import (CalibrationConfig, EvaluationConfig,
                            ExperimentConfig, TrainConfig)
from oscdamp.control import PSSParams, SCSConfig
from oscdamp.env import EnvConfig
from oscdamp.training import train


def case3_path():
    return str(resources.files("oscdamp").joinpath("data/case3.toml"))


@pytest.fixture(scope="session")
def experiment():
    return ExperimentConfig(
        model_file=case3_path(),
        seed=0,
        env=EnvConfig(episode_steps=50, window=10, noise_std=0.0,
                      eig_source="exact", init_scale=0.5, k_max=0.15,
                      alpha=0.02, beta=0.02),
        agent={"hidden": 64, "optimizer": "adam",
               "actor_lr": 1e-3, "critic_lr": 1e-3},
        train=TrainConfig(max_episodes=300, batch_size=32, buffer_capacity=1000,
                          noise_start=0.05, noise_end=0.01, checkpoint_every=100),
        scs=SCSConfig(threshold=0.06),
        pss=PSSParams(gain=-0.2),
        calibration=CalibrationConfig(),
        evaluation=EvaluationConfig(),
    )


@pytest.fixture(scope="session")
def model_and_scenario(experiment):
    return grid.load_model_file(experiment.model_file)


@pytest.fixture(scope="session")
def model3(model_and_scenario):
    return model_and_scenario[0]


@pytest.fixture(scope="session")
def scenario3(model_and_scenario):
    return model_and_scenario[1]


@pytest.fixture(scope="session")
def trained(experiment, model3, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    agent = train(experiment, model3, str(out))
    lines = (out / "episodes.csv").read_text().splitlines()[1:]
    returns = np.array([float(line.split(",")[2]) for line in lines])
    return {"agent": agent, "out": out, "returns": returns}
