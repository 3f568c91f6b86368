"""Experiment file parsing, strict key validation, seed stream fan-out."""

import numpy as np
import pytest

from oscdamp.config import (ConfigError, derived_rng, derived_seed,
                            load_experiment)
from tests.conftest import case3_path


def write_config(tmp_path, body):
    path = tmp_path / "exp.toml"
    path.write_text(body)
    return str(path)


MINIMAL = f'[model]\nfile = "{case3_path()}"\n'


class TestLoadExperiment:
    def test_minimal_file_uses_defaults(self, tmp_path):
        exp = load_experiment(write_config(tmp_path, MINIMAL))
        assert exp.seed == 0
        assert exp.env.episode_steps == 500
        assert exp.env.window == 40
        assert exp.env.alpha == 1.0
        assert exp.train.max_episodes == 5000
        assert exp.scs.threshold == 0.06
        assert exp.evaluation.delays == (0.0, 0.35, 0.8)

    def test_sections_override_defaults(self, tmp_path):
        body = "seed = 9\n" + MINIMAL + (
            "[env]\nepisode_steps = 7\nwindow = 5\n"
            "[train]\nmax_episodes = 3\n"
            "[agent]\nhidden = 16\noptimizer = \"adam\"\n"
            "[calibration]\nthresholds = [0.1, 0.2]\ntrials = 2\n")
        exp = load_experiment(write_config(tmp_path, body))
        assert exp.seed == 9
        assert exp.env.episode_steps == 7
        assert exp.train.max_episodes == 3
        assert exp.agent == {"hidden": 16, "optimizer": "adam"}
        assert exp.calibration.thresholds == (0.1, 0.2)
        cfg = exp.agent_config(4, 2)
        assert cfg.hidden == 16
        assert cfg.optimizer == "adam"

    def test_relative_model_path_resolved_against_config(self, tmp_path):
        model_src = open(case3_path(), "rb").read()
        (tmp_path / "case.toml").write_bytes(model_src)
        exp = load_experiment(write_config(tmp_path, '[model]\nfile = "case.toml"\n'))
        assert exp.model_file == str(tmp_path / "case.toml")

    def test_missing_model_section(self, tmp_path):
        with pytest.raises(ConfigError, match="missing \\[model\\] file entry"):
            load_experiment(write_config(tmp_path, "seed = 1\n"))

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown top-level keys"):
            load_experiment(write_config(tmp_path, "typo = 1\n" + MINIMAL))

    def test_unknown_section_key(self, tmp_path):
        with pytest.raises(ConfigError, match=r"unknown keys in \[env\]"):
            load_experiment(write_config(tmp_path, MINIMAL + "[env]\nwimdow = 4\n"))

    def test_unknown_agent_key(self, tmp_path):
        with pytest.raises(ConfigError, match=r"unknown keys in \[agent\]"):
            load_experiment(write_config(tmp_path, MINIMAL + "[agent]\nwidth = 4\n"))

    def test_invalid_section_value(self, tmp_path):
        with pytest.raises(ConfigError, match=r"invalid \[env\] section"):
            load_experiment(write_config(tmp_path, MINIMAL + "[env]\nwindow = 1\n"))

    def test_parse_failure(self, tmp_path):
        with pytest.raises(ConfigError, match="config parse failure"):
            load_experiment(write_config(tmp_path, "not == toml\n"))


class TestSeedStreams:
    def test_same_arguments_same_stream(self):
        a = derived_rng(42, "episode", 3).normal(size=4)
        b = derived_rng(42, "episode", 3).normal(size=4)
        assert np.array_equal(a, b)

    def test_streams_are_independent(self):
        draws = {name: derived_rng(42, name).normal(size=4).tobytes()
                 for name in ("train", "episode", "explore", "sample")}
        assert len(set(draws.values())) == len(draws)

    def test_indices_fan_out(self):
        a = derived_rng(42, "episode", 0).normal(size=4)
        b = derived_rng(42, "episode", 1).normal(size=4)
        assert not np.array_equal(a, b)

    def test_master_seed_changes_everything(self):
        a = derived_rng(1, "train").normal(size=4)
        b = derived_rng(2, "train").normal(size=4)
        assert not np.array_equal(a, b)

    def test_seed_sequence_usable_by_default_rng(self):
        seq = derived_seed(7, "evaluate", 12)
        assert isinstance(np.random.default_rng(seq), np.random.Generator)

    def test_unknown_stream_rejected(self):
        with pytest.raises(KeyError):
            derived_seed(0, "nonsense")
