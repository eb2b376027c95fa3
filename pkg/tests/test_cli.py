"""Tests for the CLI: argument parsing, help output and a tiny end-to-end run."""

import json
import subprocess
import sys


def run_hifql(*args, cwd=None):
    """Run the hifql CLI and return the result."""
    return subprocess.run(
        [sys.executable, "-m", "hifql.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


class TestCLI:
    """Tests for CLI subcommands and argument parsing."""

    def test_version(self):
        from hifql import __version__

        result = run_hifql("--version")
        assert result.returncode == 0
        assert __version__ in result.stdout

    def test_help(self):
        result = run_hifql("--help")
        assert result.returncode == 0
        for command in ("gen-data", "make-task", "train", "eval", "ablate-lambda", "compare",
                        "toy", "selftest", "mazes"):
            assert command in result.stdout

    def test_no_args_shows_help(self):
        result = run_hifql()
        assert result.returncode == 1
        assert "usage" in result.stderr.lower() or "usage" in result.stdout.lower()

    def test_mazes_list(self):
        result = run_hifql("mazes", "list")
        assert result.returncode == 0
        assert "small" in result.stdout
        assert "fork" in result.stdout
        assert "7x7" in result.stdout

    def test_gen_data_unknown_maze(self, tmp_path):
        result = run_hifql("gen-data", "--env", "nowhere", "--out", str(tmp_path / "d.bin"))
        assert result.returncode == 1
        assert "not found" in result.stdout

    def test_train_missing_config(self, tmp_path):
        result = run_hifql("train", "--config", str(tmp_path / "absent.json"))
        assert result.returncode == 1
        assert "Error" in result.stdout

    def test_eval_missing_checkpoint(self, tmp_path):
        result = run_hifql("eval", "--ckpt", str(tmp_path / "nothing"), "--task",
                           str(tmp_path / "t.json"), "--out", str(tmp_path / "out"))
        assert result.returncode == 1
        assert "Checkpoint not found" in result.stdout

    def test_bad_seed_list(self, tmp_path):
        result = run_hifql("eval", "--ckpt", "x", "--task", "y", "--out", "z", "--seeds", "a,b")
        assert result.returncode == 2

    def test_selftest(self):
        result = run_hifql("selftest")
        assert result.returncode == 0
        assert "MISS" not in result.stdout
        assert "8/8 checks passed" in result.stdout


class TestEndToEnd:
    """Data, task, train and eval through the CLI on a tiny budget."""

    def test_pipeline(self, tmp_path):
        data = tmp_path / "small.bin"
        result = run_hifql("gen-data", "--env", "small", "--episodes", "4", "--horizon", "30",
                           "--out", str(data))
        assert result.returncode == 0, result.stdout + result.stderr
        assert data.exists()

        task = tmp_path / "task.json"
        result = run_hifql("make-task", "--env", "small", "--pairs", "2", "--horizon", "5",
                           "--out", str(task))
        assert result.returncode == 0, result.stdout + result.stderr
        assert len(json.loads(task.read_text())["pairs"]) == 2

        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "algorithm": "hifql", "dataset": str(data), "env": "small", "steps": 3,
            "batch_size": 8, "hidden_dims": [8, 8], "rep_dim": 4, "num_projections": 2,
            "out_dir": str(tmp_path / "run"),
        }))
        result = run_hifql("train", "--config", str(config), "--no-progress")
        assert result.returncode == 0, result.stdout + result.stderr
        ckpt = tmp_path / "run" / "checkpoints" / "step_000003"
        assert (ckpt / "manifest.json").exists()
        assert (tmp_path / "run" / "metrics.csv").exists()

        out = tmp_path / "eval"
        result = run_hifql("eval", "--ckpt", str(ckpt), "--task", str(task), "--seeds", "0,1",
                           "--out", str(out), "--scatter")
        assert result.returncode == 0, result.stdout + result.stderr
        assert "Evaluation Results" in result.stdout
        for name in ("eval.csv", "summary.csv", "report.json", "learning_curves.svg",
                     "subgoals.svg"):
            assert (out / name).exists()
        report = json.loads((out / "report.json").read_text())
        assert report["terminate_on_success"] is True
        assert report["policy_calls"] > 0
        # two network passes per action
        assert report["policy_calls"] % 2 == 0
        assert "subgoal_drift" in report
