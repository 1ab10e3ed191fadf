"""End-to-end tests of the ``sdelbo`` command line through :func:`sdelbo.cli.main`."""

import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from sdelbo.cli import main
from sdelbo.config_manager import SEED_ENV_VAR
from sdelbo.score_net import load_checkpoint

ORACLE_X = ["elbo", "--oracle", "--x", "1", "1", "--steps", "20"]


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


def _train(out_dir: Path, *overrides: str) -> int:
    return main(["train", "train/smoke", f"out_dir={out_dir}", "train.iters=20", *overrides])


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


class TestTrain:
    def test_smoke_run_writes_outputs(self, tmp_path: Path) -> None:
        assert _train(tmp_path / "run") == 0
        names = sorted(p.name for p in (tmp_path / "run").iterdir())
        assert names == ["checkpoint.yaml", "config.yaml", "metrics.csv"]
        checkpoint = load_checkpoint(tmp_path / "run" / "checkpoint.yaml")
        assert checkpoint.net.widths == [7, 16, 16, 2]

    def test_rerun_metrics_are_byte_identical(self, tmp_path: Path) -> None:
        assert _train(tmp_path / "a") == 0
        assert _train(tmp_path / "b") == 0
        first = (tmp_path / "a" / "metrics.csv").read_bytes()
        assert first == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_seed_env_var_reseeds(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv(SEED_ENV_VAR, "4")
        assert _train(tmp_path / "run") == 0
        assert "seed: 4" in (tmp_path / "run" / "config.yaml").read_text(encoding="utf-8")

    def test_unknown_override_key_fails(self, tmp_path: Path) -> None:
        assert _train(tmp_path / "run", "+train.momentum=0.9") == 1

    def test_missing_config_file_is_named(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        missing = tmp_path / "nowhere.yaml"
        assert main(["train", str(missing)]) == 1
        assert str(missing) in capsys.readouterr().err


# ---------------------------------------------------------------------------
# elbo
# ---------------------------------------------------------------------------


class TestElbo:
    def test_oracle_point(self, tmp_path: Path) -> None:
        assert main([*ORACLE_X, "--paths", "64", "--out", str(tmp_path)]) == 0
        record = json.loads((tmp_path / "elbo.json").read_text(encoding="utf-8"))
        assert record["estimator"] == "ct_elbo_plugin"
        assert record["n_paths"] == 64
        assert np.isfinite(record["bits_per_dim"])
        assert (tmp_path / "config.yaml").is_file()

    def test_zero_paths_is_a_usage_error(self) -> None:
        assert main([*ORACLE_X, "--paths", "0"]) == 2

    def test_lambda_one_needs_ode(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main([*ORACLE_X, "--lambda", "1"]) == 1
        assert "--ode" in capsys.readouterr().err

    def test_ode_limit(self, tmp_path: Path) -> None:
        argv = [*ORACLE_X, "--lambda", "1", "--ode", "--paths", "8", "--out", str(tmp_path)]
        assert main(argv) == 0
        record = json.loads((tmp_path / "elbo.json").read_text(encoding="utf-8"))
        assert record["estimator"] == "ode_log_likelihood"

    def test_exact_transition_needs_lambda_zero(self, tmp_path: Path) -> None:
        argv = [*ORACLE_X, "--lambda", "0.5", "--transition", "exact", "--out", str(tmp_path)]
        assert main(argv) == 1

    def test_checkpoint_needs_a_point(self, tmp_path: Path) -> None:
        assert _train(tmp_path / "run") == 0
        checkpoint = str(tmp_path / "run" / "checkpoint.yaml")
        assert main(["elbo", checkpoint, "--out", str(tmp_path / "elbo")]) == 1
        argv = ["elbo", checkpoint, "--x", "0", "0", "--paths", "16", "--steps", "10"]
        assert main([*argv, "--out", str(tmp_path / "elbo")]) == 0


# ---------------------------------------------------------------------------
# sample, data, check
# ---------------------------------------------------------------------------


class TestSample:
    def test_writes_points_and_plot(self, tmp_path: Path) -> None:
        argv = ["sample", "--oracle", "--n", "50", "--steps", "20", "--out", str(tmp_path)]
        assert main(argv) == 0
        lines = (tmp_path / "samples.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "x0,x1"
        assert len(lines) == 51
        ET.fromstring((tmp_path / "samples.svg").read_text(encoding="utf-8"))

    def test_seed_env_matches_seed_flag(
        self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        base = ["sample", "--oracle", "--n", "20", "--steps", "10"]
        assert main([*base, "--seed", "3", "--out", str(tmp_path / "flag")]) == 0
        monkeypatch.setenv(SEED_ENV_VAR, "3")
        assert main([*base, "--out", str(tmp_path / "env")]) == 0
        flag = (tmp_path / "flag" / "samples.csv").read_bytes()
        assert flag == (tmp_path / "env" / "samples.csv").read_bytes()


class TestData:
    def test_swiss_roll_export(self, tmp_path: Path) -> None:
        out = tmp_path / "roll.csv"
        assert main(["data", "swiss_roll", "--n", "100", "--out", str(out)]) == 0
        assert out.is_file()
        ET.fromstring(out.with_suffix(".svg").read_text(encoding="utf-8"))


class TestCheck:
    def test_unknown_suite_is_a_usage_error(self) -> None:
        assert main(["check", "moons"]) == 2

    def test_quick_gradients(self, tmp_path: Path) -> None:
        assert main(["check", "gradients", "--quick", "--out", str(tmp_path)]) == 0
        text = (tmp_path / "report.txt").read_text(encoding="utf-8")
        assert text.startswith("suite gradients: PASS")
        assert (tmp_path / "config.yaml").is_file()
