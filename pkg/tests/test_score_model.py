"""
Tests for sdelbo.score_model — ScoreModel ABC and audit().

Tests here also serve as usage examples: each test is a self-contained
demonstration of how a ScoreModel is defined and audited.
"""

import numpy as np
import pytest
from overrides import override

from sdelbo.errors import AuditError
from sdelbo.score_model import ScoreModel, audit
from sdelbo.vp_sde import GaussianOracle, OracleScore
from tests.dummy_objects import LinearScore, OffsetScore

# ---------------------------------------------------------------------------
# Minimal concrete implementations used across tests
# ---------------------------------------------------------------------------


class StandardNormalScore(ScoreModel):
    """Score of N(0, I) at every time. Simplest valid implementation."""

    dim = 2

    @override
    def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        return -np.atleast_2d(np.asarray(y, dtype=np.float64))

    @override
    def divergence(self, y, s, *, rng=None, probes: int = 0) -> np.ndarray:
        return np.full(np.atleast_2d(y).shape[0], -float(self.dim))

    @override
    def dummy_inputs(self) -> list[dict[str, object]]:
        return [{"y": np.zeros((3, 2)), "s": 0.5}, {"y": np.ones((1, 2)), "s": 1.0}]


class WrongShapeScore(StandardNormalScore):
    @override
    def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        return np.zeros((1, self.dim))


class NanScore(StandardNormalScore):
    @override
    def divergence(self, y, s, *, rng=None, probes: int = 0) -> np.ndarray:
        return np.full(np.atleast_2d(y).shape[0], np.nan)


class RaisingScore(StandardNormalScore):
    @override
    def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        raise RuntimeError("boom")


class EmptyDummyScore(StandardNormalScore):
    @override
    def dummy_inputs(self) -> list[dict[str, object]]:
        return []


# ---------------------------------------------------------------------------
# ScoreModel is abstract
# ---------------------------------------------------------------------------


def test_score_model_cannot_be_instantiated_directly():
    with pytest.raises(TypeError):
        ScoreModel()


def test_subclass_without_divergence_cannot_be_instantiated():
    class MissingDivergence(ScoreModel):
        @override
        def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
            return y

        @override
        def dummy_inputs(self) -> list[dict[str, object]]:
            return [{}]

    with pytest.raises(TypeError):
        MissingDivergence()


def test_subclass_without_dummy_inputs_cannot_be_instantiated():
    class MissingDummyInputs(ScoreModel):
        @override
        def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
            return y

        @override
        def divergence(self, y, s, *, rng=None, probes: int = 0) -> np.ndarray:
            return y

    with pytest.raises(TypeError):
        MissingDummyInputs()


def test_override_without_decorator_is_rejected_at_class_creation():
    with pytest.raises(TypeError):

        class Undecorated(StandardNormalScore):
            def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
                return y


def test_override_with_incompatible_return_is_rejected_at_class_creation():
    with pytest.raises(TypeError, match="return type"):

        class ScalarScore(StandardNormalScore):
            @override
            def score(self, y: np.ndarray, s: np.ndarray | float) -> float:
                return 0.0


def test_annotated_overrides_define_concrete_models():
    model = OffsetScore("shifted", LinearScore(2.0), offset=0.5)
    audit(model)
    np.testing.assert_allclose(model.score(np.ones((2, 2)), 0.5), np.full((2, 2), -1.5))


def test_models_are_inexact_by_default():
    assert StandardNormalScore().exact is False
    assert OracleScore(GaussianOracle.standard(2)).exact is True


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


class TestAudit:
    def test_valid_model_passes(self) -> None:
        audit(StandardNormalScore())

    def test_oracle_passes(self) -> None:
        audit(OracleScore(GaussianOracle.standard(3)))

    def test_wrong_shape_names_input_index(self) -> None:
        with pytest.raises(AuditError, match="#0"):
            audit(WrongShapeScore())

    def test_non_finite_output_fails(self) -> None:
        with pytest.raises(AuditError, match="non-finite"):
            audit(NanScore())

    def test_exception_is_wrapped(self) -> None:
        with pytest.raises(AuditError, match="boom"):
            audit(RaisingScore())

    def test_no_dummy_inputs_fails(self) -> None:
        with pytest.raises(AuditError, match="no inputs"):
            audit(EmptyDummyScore())
