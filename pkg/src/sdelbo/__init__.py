# sdelbo: ELBOs, samplers and property checks for score-based diffusion models

from sdelbo.config_manager import ConfigManager, ConfigValidationError
from sdelbo.elbo import (
    ct_elbo,
    ct_elbo_lambda,
    ct_elbo_plugin,
    dt_elbo,
    dt_elbo_plugin,
    fk_density,
    ode_log_likelihood,
    variational_gap_oracle,
)
from sdelbo.score_model import ScoreModel, audit
from sdelbo.score_net import NetScore, ScoreNet
from sdelbo.vp_sde import GaussianOracle, OracleScore, VpSde

__all__ = [
    "ConfigManager",
    "ConfigValidationError",
    "GaussianOracle",
    "NetScore",
    "OracleScore",
    "ScoreModel",
    "ScoreNet",
    "VpSde",
    "audit",
    "ct_elbo",
    "ct_elbo_lambda",
    "ct_elbo_plugin",
    "dt_elbo",
    "dt_elbo_plugin",
    "fk_density",
    "ode_log_likelihood",
    "variational_gap_oracle",
]
