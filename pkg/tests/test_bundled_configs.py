"""Every YAML shipped in sdelbo/configs composes, validates and builds."""

import numpy as np
import pytest
from hydra.utils import instantiate

import sdelbo.configs
from sdelbo.checks import SUITES, PropertyCheck
from sdelbo.config_manager import SEED_ENV_VAR, ConfigManager
from sdelbo.run_config import validate_train_config

CM = ConfigManager(sdelbo.configs)
TRAIN_CONFIGS = [name for name in CM.list_configs() if name.startswith("train/")]


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


def test_every_config_has_the_package_header() -> None:
    CM.validate()


def test_one_config_per_suite() -> None:
    assert sorted(n for n in CM.list_configs() if n.startswith("check/")) == sorted(
        f"check/{name}" for name in SUITES
    )


@pytest.mark.parametrize("name", TRAIN_CONFIGS)
def test_train_config_validates(name: str) -> None:
    run = validate_train_config(CM.get_config(name))
    assert run.train.seed == run.seed
    run.train.validate()


@pytest.mark.parametrize("suite", sorted(SUITES))
def test_check_config_builds_and_runs_small(suite: str) -> None:
    cfg = CM.get_config(f"check/{suite}")
    check = CM.build(f"check/{suite}", key="check")
    assert isinstance(check, PropertyCheck)
    assert isinstance(check, SUITES[suite])
    small = instantiate(cfg.check, **check.dummy_budget())
    report = small.run(np.random.default_rng(cfg.seed))
    assert report.suite == suite
    assert report.assertions
