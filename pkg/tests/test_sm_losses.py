"""Tests for sdelbo.sm_losses — the four losses and the identity report."""

import numpy as np
import pytest

from sdelbo.errors import CapabilityError, DomainError
from sdelbo.sm_losses import (
    LossValue,
    dsm,
    dsm_rows,
    dsm_weighted,
    dsm_weighted_rows,
    esm,
    esm_rows,
    identity_report,
    ism,
    make_batch,
    ssm,
)
from sdelbo.vp_sde import GaussianOracle, OracleScore, VpSde
from tests.dummy_objects import LinearScore, OffsetScore

N = 20_000


@pytest.fixture()
def sde() -> VpSde:
    return VpSde()


@pytest.fixture()
def standard(sde: VpSde) -> GaussianOracle:
    return GaussianOracle.standard(2, sde)


def _batch(oracle: GaussianOracle, s, seed: int = 0, n: int = N):
    rng = np.random.default_rng(seed)
    return make_batch(oracle.sde, oracle.sample(n, rng), s, rng)


def _within(value: LossValue, expected: float, sigmas: float = 4.0) -> bool:
    return abs(value.mean - expected) <= sigmas * value.stderr + 1e-12


# ---------------------------------------------------------------------------
# Batches and values
# ---------------------------------------------------------------------------


class TestBatch:
    def test_rejects_times_below_cutoff(self, sde: VpSde) -> None:
        with pytest.raises(DomainError, match="s_min"):
            make_batch(sde, np.zeros((2, 2)), 1e-7, np.random.default_rng(0))

    def test_scalar_time_is_broadcast(self, standard: GaussianOracle) -> None:
        batch = _batch(standard, 0.5, n=8)
        assert batch.s.shape == (8,)
        assert batch.n == 8
        np.testing.assert_allclose(batch.g2, 10.05)

    def test_perturbed_points_match_kernel(self, standard: GaussianOracle) -> None:
        batch = _batch(standard, 0.3, n=4)
        m, v = standard.sde.mean_coef(0.3), standard.sde.cond_var(0.3)
        np.testing.assert_allclose(batch.y_s, m * batch.y0 + np.sqrt(v) * batch.noise)

    def test_single_row_has_zero_stderr(self) -> None:
        value = LossValue.from_rows(np.array([1.5]))
        assert value == LossValue(mean=1.5, stderr=0.0, n=1)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


class TestLosses:
    def test_esm_of_exact_score_is_zero(self, standard: GaussianOracle) -> None:
        batch = _batch(standard, 0.4)
        assert esm(OracleScore(standard), batch, standard).mean == 0.0

    def test_esm_without_oracle(self, standard: GaussianOracle) -> None:
        with pytest.raises(CapabilityError):
            esm(LinearScore(1.0), _batch(standard, 0.4, n=4), None)

    def test_esm_of_offset_score_is_closed_form(self, standard: GaussianOracle) -> None:
        batch = _batch(standard, 0.5, n=16)
        model = OffsetScore("shift", OracleScore(standard), offset=0.5)
        np.testing.assert_allclose(esm_rows(model, batch, standard), 0.5 * 10.05 * 2 * 0.25)

    def test_esm_of_zero_score(self, standard: GaussianOracle) -> None:
        value = esm(LinearScore(0.0), _batch(standard, 0.5), standard)
        assert _within(value, 0.5 * 10.05 * 2)

    def test_ism_of_zero_score_is_zero(self, standard: GaussianOracle) -> None:
        assert ism(LinearScore(0.0), _batch(standard, 0.5, n=16)).mean == 0.0

    def test_ism_of_minus_identity_in_one_dimension(self, sde: VpSde) -> None:
        oracle = GaussianOracle.standard(1, sde)
        value = ism(LinearScore(1.0, dim=1), _batch(oracle, 0.5))
        assert _within(value, -0.5 * 10.05)

    def test_ism_rejects_unknown_divergence_mode(self, standard: GaussianOracle) -> None:
        with pytest.raises(DomainError, match="div_mode"):
            ism(LinearScore(1.0), _batch(standard, 0.5, n=4), div_mode="trace")

    def test_ssm_equals_ism_for_linear_field(self, standard: GaussianOracle) -> None:
        batch = _batch(standard, 0.5, n=64)
        model = OracleScore(standard)
        exact = ism(model, batch)
        sliced = ssm(model, batch, 1, np.random.default_rng(1))
        assert sliced.mean == pytest.approx(exact.mean, rel=1e-12)

    def test_ssm_needs_a_probe(self, standard: GaussianOracle) -> None:
        with pytest.raises(DomainError, match="probes"):
            ssm(LinearScore(1.0), _batch(standard, 0.5, n=4), 0, np.random.default_rng(0))

    def test_dsm_of_zero_score(self, standard: GaussianOracle) -> None:
        value = dsm(LinearScore(0.0), _batch(standard, 0.5))
        assert _within(value, 0.5 * 10.05 / standard.sde.cond_var(0.5) * 2)

    def test_weighted_dsm_of_zero_score_is_time_independent(
        self, standard: GaussianOracle
    ) -> None:
        for seed, s in enumerate((0.01, 0.5, 1.0)):
            value = dsm_weighted(LinearScore(0.0), _batch(standard, s, seed=seed))
            assert _within(value, 1.0)

    def test_weighted_dsm_rescales_to_dsm(self, standard: GaussianOracle) -> None:
        rng = np.random.default_rng(3)
        batch = make_batch(
            standard.sde, standard.sample(32, rng), rng.uniform(0.01, 1.0, 32), rng
        )
        model = LinearScore(0.7)
        np.testing.assert_allclose(
            batch.g2 / batch.var * dsm_weighted_rows(model, batch),
            dsm_rows(model, batch),
            rtol=1e-12,
        )


# ---------------------------------------------------------------------------
# Identity report
# ---------------------------------------------------------------------------


class TestIdentityReport:
    def test_exact_score_has_zero_esm(self, standard: GaussianOracle) -> None:
        report = identity_report(OracleScore(standard), standard, 5000, np.random.default_rng(0))
        assert report.value("ESM").value == 0.0
        ism_row, half_fisher = report.value("ISM"), report.value("half_fisher")
        combined = 4.0 * (ism_row.stderr + half_fisher.stderr)
        assert abs(ism_row.value + half_fisher.value) <= combined

    def test_fisher_of_standard_normal(self, standard: GaussianOracle) -> None:
        report = identity_report(
            LinearScore(0.3), standard, N, np.random.default_rng(1), s=0.5
        )
        row = report.value("half_fisher")
        assert abs(row.value - 0.5 * 10.05 * 2) <= 4.0 * row.stderr

    def test_chain_holds_for_linear_score(self, standard: GaussianOracle) -> None:
        report = identity_report(LinearScore(0.3), standard, N, np.random.default_rng(2))
        assert [row.loss_name for row in report.rows] == [
            "ESM",
            "ISM",
            "SSM",
            "DSM",
            "half_fisher",
            "half_cond_fisher",
        ]
        assert len(report.equalities) == 3
        assert report.violations == []

    def test_csv_columns(self, standard: GaussianOracle) -> None:
        report = identity_report(LinearScore(1.0), standard, 16, np.random.default_rng(0))
        lines = report.to_csv().splitlines()
        assert lines[0] == "loss_name,value,stderr"
        assert len(lines) == 7
        assert lines[1].startswith("ESM,")
