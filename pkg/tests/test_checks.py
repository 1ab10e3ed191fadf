"""Tests for sdelbo.checks — report bookkeeping and suites at small budgets."""

import math

import numpy as np
import pytest

from sdelbo.checks import (
    SUITES,
    CheckReport,
    ConsistencyCheck,
    FkCheck,
    GapCheck,
    GradientsCheck,
    OracleElboCheck,
    PropertyCheck,
)

# ---------------------------------------------------------------------------
# CheckReport
# ---------------------------------------------------------------------------


class TestCheckReport:
    def test_empty_report_passes(self) -> None:
        report = CheckReport("empty")
        assert report.passed
        assert report.failures == []

    def test_at_most(self) -> None:
        report = CheckReport("bounds")
        report.expect_at_most("inside", 0.5, 1.0)
        report.expect_at_most("edge", 1.0, 1.0)
        report.expect_at_most("outside", 1.5, 1.0)
        assert [a.passed for a in report.assertions] == [True, True, False]
        assert [a.name for a in report.failures] == ["outside"]
        assert not report.passed

    def test_nan_never_passes(self) -> None:
        report = CheckReport("nan")
        report.expect_at_most("undefined", math.nan, 1.0)
        assert not report.passed

    def test_within_uses_absolute_difference(self) -> None:
        report = CheckReport("within")
        report.expect_within("low", -0.29, 0.1)
        report.expect_within("high", 0.31, 0.1)
        report.expect_within("shifted", 0.31, 0.1, atol=0.02)
        assert [a.passed for a in report.assertions] == [True, False, True]
        assert report.assertions[0].tolerance == pytest.approx(0.3)
        assert "stderr" in report.assertions[0].detail

    def test_below_is_strict(self) -> None:
        report = CheckReport("below")
        report.expect_below("smaller", 0.1, 0.2)
        report.expect_below("equal", 0.2, 0.2)
        report.expect_below("undefined", math.nan, math.inf)
        assert [a.passed for a in report.assertions] == [True, False, False]


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


class TestSuites:
    def test_registry_names_every_suite(self) -> None:
        assert set(SUITES) == {
            "identity",
            "consistency",
            "debias",
            "gap",
            "lambda-equiv",
            "fk",
            "gradients",
            "oracle-elbo",
            "lambda-elbo",
        }
        for name, cls in SUITES.items():
            assert issubclass(cls, PropertyCheck)
            assert cls.suite == name

    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_dummy_budget_fits_constructor(self, name: str) -> None:
        cls = SUITES[name]
        check = cls(**cls().dummy_budget())
        for key, value in check.dummy_budget().items():
            assert getattr(check, key) == value

    def test_gradients_pass(self) -> None:
        check = GradientsCheck(**GradientsCheck().dummy_budget())
        report = check.run(np.random.default_rng(0))
        assert report.suite == "gradients"
        assert report.passed, report.failures

    def test_oracle_elbo_at_small_budget(self) -> None:
        check = OracleElboCheck(**OracleElboCheck().dummy_budget())
        report = check.run(np.random.default_rng(0))
        assert report.passed, report.failures
        (row,) = report.tables["elbo"]
        assert row["target"] == pytest.approx(-(1.0 + math.log(2.0 * math.pi)))
        assert row["estimator"] == "ct_elbo_plugin"

    def test_consistency_ladder_table(self) -> None:
        check = ConsistencyCheck(**ConsistencyCheck().dummy_budget())
        report = check.run(np.random.default_rng(1))
        ladder = report.tables["ladder"]
        assert [row["layers"] for row in ladder] == [4, 16, "inf"]
        assert all(math.isfinite(row["stderr"]) for row in ladder)
        assert len(report.assertions) == 4

    def test_consistency_ladder_at_reduced_budget(self) -> None:
        check = ConsistencyCheck(layers=[16, 64, 256], n_paths=8192, final_tolerance=0.03)
        report = check.run(np.random.default_rng(4))
        assert report.passed, report.failures
        gaps = [row["abs_diff"] for row in report.tables["ladder"][:-1]]
        assert gaps[0] == pytest.approx(0.119, abs=0.03)

    def test_fk_and_gap_pass_on_stderr_alone(self) -> None:
        for cls in (FkCheck, GapCheck):
            report = cls(**cls().dummy_budget()).run(np.random.default_rng(0))
            assert report.passed, report.failures

    def test_gradients_default_step(self) -> None:
        assert GradientsCheck().fd_eps == 1e-5

    def test_same_seed_same_report(self) -> None:
        check = OracleElboCheck(**OracleElboCheck().dummy_budget())
        first = check.run(np.random.default_rng(3))
        second = check.run(np.random.default_rng(3))
        assert first.assertions == second.assertions
