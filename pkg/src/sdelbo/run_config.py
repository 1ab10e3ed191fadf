"""
run_config.py — Structured schemas for training run configs.

A composed training config is merged onto :class:`TrainRunConfig` so that
misspelled or unknown keys fail loudly instead of being ignored, and so the
numeric fields carry the right types before they reach the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import ConfigKeyError, ValidationError

from sdelbo.config_manager import ConfigValidationError
from sdelbo.score_net import ScoreNet
from sdelbo.toy_data import HOLDOUT_FRACTION, Dataset, make_dataset
from sdelbo.trainer import TrainConfig
from sdelbo.vp_sde import VpSde


@dataclass
class SdeConfig:
    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0

    def build(self) -> VpSde:
        return VpSde(self.beta_min, self.beta_max, self.horizon)


@dataclass
class NetConfig:
    """Hidden widths only; input and output widths follow from the data dimension."""

    hidden: list[int] = field(default_factory=lambda: [128, 128, 128])
    activation: str = "swish"
    time_features: int = 6
    seed: int = 0

    def build(self, dim: int) -> ScoreNet:
        widths = [dim + 1 + 2 * self.time_features, *self.hidden, dim]
        return ScoreNet.init(
            widths, self.seed, activation=self.activation, time_features=self.time_features
        )


@dataclass
class DatasetConfig:
    name: str = "swiss_roll"
    n: int = 10000
    seed: int = 0
    noise_std: float = 0.05
    dim: int = 2
    centers: list[list[float]] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)
    cov_scale: float = 0.1
    standardize: bool = True
    holdout: float = HOLDOUT_FRACTION

    def build(self) -> Dataset:
        return make_dataset(
            self.name,
            self.n,
            self.seed,
            noise_std=self.noise_std,
            dim=self.dim,
            centers=self.centers or None,
            weights=self.weights or None,
            cov_scale=self.cov_scale,
            standardize=self.standardize,
        )


@dataclass
class TrainRunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    sde: SdeConfig = field(default_factory=SdeConfig)
    net: NetConfig = field(default_factory=NetConfig)
    data: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def validate_train_config(cfg: DictConfig) -> TrainRunConfig:
    """Merge *cfg* onto the schema and return the typed run config.

    The top-level ``seed`` is propagated into ``train.seed`` so a single
    override reseeds the whole run.

    Raises:
        ConfigValidationError: On an unknown key or a value of the wrong type;
            the message names the offending key.
    """
    schema = OmegaConf.structured(TrainRunConfig)
    try:
        merged = OmegaConf.merge(schema, cfg)
    except ConfigKeyError as exc:
        raise ConfigValidationError(
            f"Unknown key {exc.full_key!r} in training config. "
            f"Allowed top-level keys: {sorted(schema.keys())}."
        ) from exc
    except ValidationError as exc:
        raise ConfigValidationError(
            f"Invalid value for {exc.full_key!r} in training config: {exc.msg}"
        ) from exc
    run = OmegaConf.to_object(merged)
    run.train.seed = run.seed
    return run
