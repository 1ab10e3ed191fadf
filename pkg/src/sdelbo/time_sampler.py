"""
time_sampler.py — Training-time distributions for score matching.

:class:`UniformTimes` draws s uniformly on [s_min, T]. :class:`DebiasedTimeDist`
draws s with density proportional to g(s)²/v_s, flattened to a plateau below
s_ε, so that ``Z · dsm_weighted`` is an unbiased estimate of the time-integrated
DSM term of the CT-ELBO (up to the plateau). Both return a log importance
weight alongside the times, so ``mean(exp(log_weight) · h(s))`` estimates
∫ h(s) ds for either sampler.
"""

from __future__ import annotations

import abc
import logging
import math

import numpy as np
from overrides import EnforceOverrides, override

from sdelbo.errors import DomainError
from sdelbo.score_model import ScoreModel
from sdelbo.sm_losses import LossValue, dsm_weighted_rows, make_batch
from sdelbo.vp_sde import VpSde

logger = logging.getLogger(__name__)

S_EPS = 1e-3

# Plateau share of Z above which the debiased objective is flagged as biased.
_PLATEAU_WARN = 0.1


class TimeSampler(abc.ABC, EnforceOverrides):
    """Source of training times with importance weights."""

    sde: VpSde

    @abc.abstractmethod
    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw *n* times and return ``(s, log_weight)``, both of shape ``(n,)``."""
        ...


class UniformTimes(TimeSampler):
    """s ~ Uniform[s_min, T], log_weight = log(T − s_min)."""

    def __init__(self, sde: VpSde, s_min: float = 1e-5) -> None:
        if not 0.0 <= s_min < sde.horizon:
            raise DomainError(f"s_min must lie in [0, T={sde.horizon}), got {s_min}")
        self.sde = sde
        self.s_min = s_min

    @override
    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        s = rng.uniform(self.s_min, self.sde.horizon, size=n)
        return s, np.full(n, math.log(self.sde.horizon - self.s_min))


class DebiasedTimeDist(TimeSampler):
    """Density q_ε(s) ∝ g(s)²/v_s on [s_ε, T], constant at its s_ε value below.

    Args:
        sde: The inference SDE supplying β and v_s.
        s_eps: Plateau cutoff in (0, T).

    Examples:
        >>> dist = DebiasedTimeDist(VpSde())
        >>> float(dist.inv_cdf(1.0))
        1.0
    """

    def __init__(self, sde: VpSde, s_eps: float = S_EPS) -> None:
        if not 0.0 < s_eps < sde.horizon:
            raise DomainError(f"s_eps must lie in (0, T={sde.horizon}), got {s_eps}")
        self.sde = sde
        self.s_eps = s_eps
        self.plateau = float(sde.beta(s_eps) / sde.cond_var(s_eps))
        self._knee = self.plateau * s_eps
        self._phi_eps = float(self.phi(s_eps))
        self.Z = float(self.unnorm_cdf(sde.horizon))
        if self.plateau_mass > _PLATEAU_WARN:
            logger.warning(
                "plateau below s_eps=%g holds %.2f%% of the time density; "
                "the debiased objective is biased by that share",
                s_eps,
                100.0 * self.plateau_mass,
            )

    @property
    def plateau_mass(self) -> float:
        """Probability of drawing s < s_ε."""
        return self._knee / self.Z

    def phi(self, s: np.ndarray | float) -> np.ndarray | float:
        """log(exp(A(s)) − 1), an antiderivative of g²/v_s.

        Raises:
            DomainError: At s = 0, where the antiderivative is −∞.
        """
        s = self.sde.check_time(s)
        if np.any(s <= 0.0):
            raise DomainError("phi is -inf at s=0; evaluate on (0, T]")
        a = np.asarray(self.sde.int_beta(s))
        out = a + np.log(-np.expm1(-a))
        return float(out) if out.ndim == 0 else out

    def unnorm_pdf(self, s: np.ndarray | float) -> np.ndarray | float:
        s = self.sde.check_time(s)
        above = np.maximum(s, self.s_eps)
        out = np.where(
            s < self.s_eps,
            self.plateau,
            np.asarray(self.sde.beta(above)) / np.asarray(self.sde.cond_var(above)),
        )
        return float(out) if out.ndim == 0 else out

    def unnorm_cdf(self, s: np.ndarray | float) -> np.ndarray | float:
        s = self.sde.check_time(s)
        above = np.maximum(s, self.s_eps)
        out = np.where(
            s < self.s_eps,
            self.plateau * s,
            self._knee + (np.asarray(self.phi(above)) - self._phi_eps),
        )
        return float(out) if out.ndim == 0 else out

    def pdf(self, s: np.ndarray | float) -> np.ndarray | float:
        return self.unnorm_pdf(s) / self.Z

    def cdf(self, s: np.ndarray | float) -> np.ndarray | float:
        return self.unnorm_cdf(s) / self.Z

    def inv_cdf(self, u: np.ndarray | float) -> np.ndarray | float:
        """Inverse of :meth:`cdf`.

        Below the knee the CDF is linear. Above it, φ(s) = Zu − plateau·s_ε +
        φ(s_ε) gives A(s) = log(1 + exp(·)), which :meth:`VpSde.inv_int_beta`
        turns back into a time.

        Raises:
            DomainError: If any *u* lies outside [0, 1].
        """
        u = np.asarray(u, dtype=np.float64)
        if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
            raise DomainError("inv_cdf needs probabilities in [0, 1]")
        r = self.Z * u
        a = np.logaddexp(0.0, r - self._knee + self._phi_eps)
        out = np.where(
            r < self._knee,
            r / self.plateau,
            np.asarray(self.sde.inv_int_beta(a)),
        )
        return float(out) if out.ndim == 0 else out

    @override
    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        # 1 - U lies in (0, 1], so s is never exactly 0
        s = np.asarray(self.inv_cdf(1.0 - rng.random(n)))
        return s, math.log(self.Z) - np.log(np.asarray(self.unnorm_pdf(s)))

    def table(self, n_points: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(s, pdf, cdf)`` on a uniform grid over [0, T], for plotting."""
        s = np.linspace(0.0, self.sde.horizon, n_points)
        return s, np.asarray(self.pdf(s)), np.asarray(self.cdf(s))


def sample_times(
    sampler: TimeSampler, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(s, log_weight)`` from *sampler*."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return sampler.sample(n, rng)


def debiased_dsm_rows(
    model: ScoreModel, y0: np.ndarray, dist: DebiasedTimeDist, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``Z · dsm_weighted`` with the times they were drawn at."""
    s, _ = dist.sample(np.atleast_2d(y0).shape[0], rng)
    batch = make_batch(dist.sde, y0, s, rng, s_min=0.0)
    return dist.Z * dsm_weighted_rows(model, batch), s


def debiased_dsm_objective(
    model: ScoreModel, y0: np.ndarray, dist: DebiasedTimeDist, rng: np.random.Generator
) -> LossValue:
    """Estimate ∫₀ᵀ DSM(s) ds by sampling s ~ q_ε and weighting the DSM by v_s/g².

    Unbiased on [s_ε, T]; on the plateau the weight is off by
    (g²/v_s)/(g²(s_ε)/v_{s_ε}), which is the documented bias.
    """
    rows, _ = debiased_dsm_rows(model, y0, dist, rng)
    return LossValue.from_rows(rows)
