"""Tests for sdelbo.time_sampler — uniform and debiased training times."""

import logging
import math

import numpy as np
import pytest
from scipy import integrate, stats

from sdelbo.errors import DomainError
from sdelbo.sm_losses import dsm_rows, make_batch
from sdelbo.time_sampler import (
    DebiasedTimeDist,
    UniformTimes,
    debiased_dsm_objective,
    debiased_dsm_rows,
    sample_times,
)
from sdelbo.vp_sde import VpSde
from tests.dummy_objects import LinearScore


@pytest.fixture()
def dist() -> DebiasedTimeDist:
    return DebiasedTimeDist(VpSde())


# ---------------------------------------------------------------------------
# Density and CDF
# ---------------------------------------------------------------------------


class TestDensity:
    def test_phi_derivative_is_the_integrand(self, dist: DebiasedTimeDist) -> None:
        h = 1e-6
        fd = (dist.phi(0.5 + h) - dist.phi(0.5 - h)) / (2 * h)
        sde = dist.sde
        expected = sde.beta(0.5) / (1.0 - math.exp(-sde.int_beta(0.5)))
        assert fd == pytest.approx(expected, rel=1e-6)

    def test_phi_at_horizon(self, dist: DebiasedTimeDist) -> None:
        assert dist.phi(1.0) == pytest.approx(10.049957, abs=1e-6)

    def test_phi_is_increasing(self, dist: DebiasedTimeDist) -> None:
        assert np.all(np.diff(dist.phi(np.linspace(0.01, 1.0, 200))) > 0)

    def test_phi_rejects_zero(self, dist: DebiasedTimeDist) -> None:
        with pytest.raises(DomainError):
            dist.phi(0.0)

    def test_cdf_starts_at_zero_and_is_continuous_at_knee(self, dist: DebiasedTimeDist) -> None:
        assert dist.unnorm_cdf(0.0) == 0.0
        assert dist.unnorm_cdf(dist.s_eps) == dist.plateau * dist.s_eps
        assert dist.cdf(dist.s_eps) == dist.plateau * dist.s_eps / dist.Z

    def test_pdf_is_continuous_at_knee(self, dist: DebiasedTimeDist) -> None:
        left = dist.unnorm_pdf(dist.s_eps * (1.0 - 1e-12))
        assert left == dist.plateau
        assert dist.unnorm_pdf(dist.s_eps) == pytest.approx(dist.plateau, rel=1e-12)

    def test_normalizer_matches_quadrature(self, dist: DebiasedTimeDist) -> None:
        below, _ = integrate.quad(dist.unnorm_pdf, 0.0, dist.s_eps)
        above, _ = integrate.quad(dist.unnorm_pdf, dist.s_eps, 1.0, epsabs=0.0, epsrel=1e-12)
        assert below + above == pytest.approx(dist.Z, rel=1e-8)

    def test_large_plateau_is_reported(self, caplog) -> None:
        with caplog.at_level(logging.WARNING, logger="sdelbo.time_sampler"):
            dist = DebiasedTimeDist(VpSde(), s_eps=0.1)
        assert dist.plateau_mass > 0.1
        assert "plateau" in caplog.text

    def test_default_cutoff_is_quiet(self, dist: DebiasedTimeDist, caplog) -> None:
        with caplog.at_level(logging.WARNING, logger="sdelbo.time_sampler"):
            DebiasedTimeDist(VpSde())
        assert 0.01 < dist.plateau_mass < 0.1
        assert caplog.text == ""

    @pytest.mark.parametrize("s_eps", [0.0, 1.0, -0.1])
    def test_cutoff_must_lie_inside_horizon(self, s_eps: float) -> None:
        with pytest.raises(DomainError):
            DebiasedTimeDist(VpSde(), s_eps=s_eps)

    def test_table_spans_horizon(self, dist: DebiasedTimeDist) -> None:
        s, pdf, cdf = dist.table(50)
        assert s[0] == 0.0 and s[-1] == 1.0
        assert np.all(pdf > 0)
        assert cdf[-1] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Inverse CDF
# ---------------------------------------------------------------------------


class TestInverseCdf:
    def test_endpoints(self, dist: DebiasedTimeDist) -> None:
        assert dist.inv_cdf(0.0) == 0.0
        assert dist.inv_cdf(1.0) == pytest.approx(1.0, abs=1e-9)

    def test_round_trip(self, dist: DebiasedTimeDist) -> None:
        s = np.geomspace(1e-6, 1.0, 1000)
        np.testing.assert_allclose(dist.inv_cdf(dist.cdf(s)), s, rtol=0.0, atol=1e-9)

    @pytest.mark.parametrize("u", [-0.1, 1.5, float("nan")])
    def test_rejects_non_probabilities(self, dist: DebiasedTimeDist, u: float) -> None:
        with pytest.raises(DomainError):
            dist.inv_cdf(u)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


class TestSampling:
    def test_draws_follow_the_cdf(self, dist: DebiasedTimeDist) -> None:
        s, _ = sample_times(dist, 100_000, np.random.default_rng(0))
        assert stats.kstest(s, dist.cdf).statistic <= 0.01

    def test_weights_recover_the_horizon(self, dist: DebiasedTimeDist) -> None:
        _, log_w = sample_times(dist, 100_000, np.random.default_rng(1))
        w = np.exp(log_w)
        assert abs(w.mean() - 1.0) <= 4.0 * w.std(ddof=1) / math.sqrt(w.size)

    def test_uniform_mean_and_weight(self) -> None:
        sampler = UniformTimes(VpSde(), s_min=0.1)
        s, log_w = sample_times(sampler, 50_000, np.random.default_rng(2))
        assert abs(s.mean() - 0.55) <= 4.0 * s.std(ddof=1) / math.sqrt(s.size)
        np.testing.assert_allclose(log_w, math.log(0.9))

    def test_uniform_rejects_cutoff_past_horizon(self) -> None:
        with pytest.raises(DomainError):
            UniformTimes(VpSde(), s_min=1.0)

    def test_needs_at_least_one_draw(self, dist: DebiasedTimeDist) -> None:
        with pytest.raises(DomainError):
            sample_times(dist, 0, np.random.default_rng(0))

    def test_zero_score_objective_is_half_d_times_normalizer(
        self, dist: DebiasedTimeDist
    ) -> None:
        rng = np.random.default_rng(3)
        y0 = rng.standard_normal((50_000, 2))
        value = debiased_dsm_objective(LinearScore(0.0), y0, dist, rng)
        assert abs(value.mean - dist.Z) <= 4.0 * value.stderr

    def test_debiased_dsm_has_lower_variance_than_uniform(self, dist: DebiasedTimeDist) -> None:
        rng = np.random.default_rng(4)
        y0 = rng.standard_normal((20_000, 2))
        model = LinearScore(1.0)
        debiased, _ = debiased_dsm_rows(model, y0, dist, rng)
        s, log_w = sample_times(UniformTimes(dist.sde, s_min=dist.s_eps), y0.shape[0], rng)
        uniform = np.exp(log_w) * dsm_rows(model, make_batch(dist.sde, y0, s, rng))
        assert debiased.var() < 0.25 * uniform.var()
