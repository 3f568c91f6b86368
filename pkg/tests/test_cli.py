"""End-to-end command-line behavior and exit codes."""

import numpy as np
import pytest

from oscdamp.cli import main
from tests.conftest import case3_path


def write_exp(tmp_path, name="exp.toml", **overrides):
    lines = [
        "seed = 3",
        "[model]",
        f'file = "{case3_path()}"',
        "[env]",
        "episode_steps = 10",
        "window = 10",
        "noise_std = 0.0",
        'eig_source = "exact"',
        "alpha = 0.02",
        "beta = 0.02",
        "init_scale = 0.5",
        "k_max = 0.15",
        "[agent]",
        "hidden = 16",
        'optimizer = "adam"',
        "actor_lr = 1e-3",
        "critic_lr = 1e-3",
        "[train]",
        "max_episodes = 5",
        "batch_size = 16",
        "buffer_capacity = 200",
        "checkpoint_every = 0",
        "[scs]",
        "threshold = 0.06",
        "[pss]",
        "gain = -0.2",
        "[calibration]",
        "thresholds = [0.02, 0.2]",
        "trials = 2",
        "[evaluation]",
        "delays = [0.0]",
        "episodes = 2",
        "nonlinear = false",
        "episode_steps = 20",
    ]
    for key, value in overrides.items():
        lines.append(f"[{key}]" if value is None else value)
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One training run shared by the checkpoint-consuming commands."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_exp(root)
    out = root / "train"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    return {"config": cfg, "root": root,
            "checkpoint": str(out / "checkpoint_final.npz")}


class TestAnalyze:
    def test_writes_modes_and_selection(self, cli_run, tmp_path, capsys):
        assert main(["analyze", "--config", cli_run["config"],
                     "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "2 oscillatory mode pair(s)" in out
        assert "target inter-area mode" in out
        assert "selected generators" in out
        lines = (tmp_path / "modes.csv").read_text().splitlines()
        assert lines[0] == "re,im,f,zeta,p_gen1,p_gen2,p_gen3"
        assert len(lines) == 7          # header + 2 n_g eigenvalues
        body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        assert np.all(body[:, 0] <= 1e-9)           # no unstable modes


class TestTrain:
    def test_outputs_exist(self, cli_run):
        root = cli_run["root"]
        assert (root / "train" / "episodes.csv").exists()
        assert (root / "train" / "checkpoint_final.npz").exists()

    def test_seed_flag_overrides_config(self, cli_run, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", cli_run["config"], "--out", str(a),
                     "--seed", "101"]) == 0
        assert main(["train", "--config", cli_run["config"], "--out", str(b),
                     "--seed", "102"]) == 0
        assert ((a / "episodes.csv").read_text()
                != (b / "episodes.csv").read_text())


class TestCalibrate:
    def test_requires_checkpoint(self, cli_run, tmp_path):
        assert main(["calibrate", "--config", cli_run["config"],
                     "--out", str(tmp_path)]) == 1

    def test_writes_sweep(self, cli_run, tmp_path, capsys):
        assert main(["calibrate", "--config", cli_run["config"],
                     "--checkpoint", cli_run["checkpoint"],
                     "--out", str(tmp_path)]) == 0
        assert "best threshold:" in capsys.readouterr().out
        lines = (tmp_path / "calibration.csv").read_text().splitlines()
        assert lines[1] == "threshold,trial_0,trial_1,mean"
        assert len(lines) == 4


class TestEvaluate:
    def test_requires_checkpoint(self, cli_run, tmp_path):
        assert main(["evaluate", "--config", cli_run["config"],
                     "--out", str(tmp_path)]) == 1

    def test_summary_matrix(self, cli_run, tmp_path):
        assert main(["evaluate", "--config", cli_run["config"],
                     "--checkpoint", cli_run["checkpoint"],
                     "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0] == "controller,environment,delay,P_bar,settling_time,peak_omega,unstable"
        cells = [ln.split(",")[:3] for ln in lines[1:]]
        assert cells == [["drl_scs", "linear", "0"], ["pss", "linear", "0"]]
        assert (tmp_path / "traj_pss_linear_delay0ms.csv").exists()
        assert (tmp_path / "traj_drl_scs_linear_delay0ms.csv").exists()

    def test_pss_baseline_independent_of_checkpoint(self, cli_run, tmp_path):
        # the baseline never consults the actor, so a different checkpoint
        # must leave its summary row untouched
        other_out = tmp_path / "other_train"
        assert main(["train", "--config", cli_run["config"],
                     "--out", str(other_out), "--seed", "77"]) == 0
        e1, e2 = tmp_path / "e1", tmp_path / "e2"
        assert main(["evaluate", "--config", cli_run["config"],
                     "--checkpoint", cli_run["checkpoint"], "--out", str(e1)]) == 0
        assert main(["evaluate", "--config", cli_run["config"],
                     "--checkpoint", str(other_out / "checkpoint_final.npz"),
                     "--out", str(e2)]) == 0
        row1 = [ln for ln in (e1 / "summary.csv").read_text().splitlines()
                if ln.startswith("pss,")]
        row2 = [ln for ln in (e2 / "summary.csv").read_text().splitlines()
                if ln.startswith("pss,")]
        assert row1 == row2


class TestSimulate:
    def test_writes_trajectory(self, cli_run, tmp_path):
        assert main(["simulate", "--config", cli_run["config"],
                     "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "trajectory.csv").read_text().splitlines()
        assert lines[0].startswith("t,")
        assert lines[0].endswith(",scs_on")
        assert len(lines) == 102        # header + x0 + 10 steps x 10 substeps

    def test_deterministic_given_seed(self, cli_run, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["simulate", "--config", cli_run["config"],
                         "--checkpoint", cli_run["checkpoint"],
                         "--out", str(out), "--seed", "5"]) == 0
        assert ((a / "trajectory.csv").read_text()
                == (b / "trajectory.csv").read_text())


class TestExitCodes:
    def test_unknown_config_key_is_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text(f'[model]\nfile = "{case3_path()}"\n[env]\nwimdow = 2\n')
        assert main(["analyze", "--config", str(bad), "--out", str(tmp_path)]) == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_model_file_is_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('[model]\nfile = "/nonexistent/case.toml"\n')
        assert main(["analyze", "--config", str(bad), "--out", str(tmp_path)]) == 1
        assert "model file not found" in capsys.readouterr().err

    def test_missing_config_file_is_1(self, tmp_path, capsys):
        assert main(["analyze", "--config", str(tmp_path / "nope.toml"),
                     "--out", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_training_divergence_is_2(self, tmp_path, capsys):
        cfg = write_exp(tmp_path, name="diverge.toml")
        text = (open(cfg).read()
                .replace("actor_lr = 1e-3", "actor_lr = 1e12")
                .replace("critic_lr = 1e-3", "critic_lr = 1e12")
                .replace('optimizer = "adam"', 'optimizer = "sgd"')
                .replace("max_episodes = 5", "max_episodes = 30"))
        open(cfg, "w").write(text)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
        assert "training divergence" in capsys.readouterr().err

    def test_unwritable_out_is_3(self, cli_run, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("plain file, not a directory\n")
        assert main(["analyze", "--config", cli_run["config"],
                     "--out", str(blocker / "sub")]) == 3
        assert "I/O error" in capsys.readouterr().err
