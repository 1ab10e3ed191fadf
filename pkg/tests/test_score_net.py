"""Tests for sdelbo.score_net — forward pass, reverse mode, divergences and checkpoints."""

import logging

import numpy as np
import pytest

from sdelbo.errors import DomainError, NumericError
from sdelbo.score_model import audit
from sdelbo.score_net import (
    Checkpoint,
    NetScore,
    ScoreNet,
    load_checkpoint,
    save_checkpoint,
    time_features,
)
from sdelbo.vp_sde import VpSde

DIM = 2
K = 2


def _net(activation: str = "swish", seed: int = 0) -> ScoreNet:
    return ScoreNet.init([DIM + 1 + 2 * K, 8, 8, DIM], seed, activation=activation, time_features=K)


def _central_diff(net: ScoreNet, fn, name: str, eps: float = 1e-6) -> np.ndarray:
    base = net.params[name]
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        vals = []
        for sign in (1.0, -1.0):
            params = dict(net.params)
            bumped = base.copy()
            bumped[idx] += sign * eps
            params[name] = bumped
            vals.append(fn(net.with_params(params)))
        grad[idx] = (vals[0] - vals[1]) / (2 * eps)
    return grad


@pytest.fixture()
def batch() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(0)
    return rng.standard_normal((5, DIM)), rng.uniform(0.05, 0.95, size=5)


# ---------------------------------------------------------------------------
# Construction and forward
# ---------------------------------------------------------------------------


class TestConstruction:
    def test_time_features_shape_and_values(self) -> None:
        feats = time_features(0.25, 3, 2)
        assert feats.shape == (3, 5)
        np.testing.assert_allclose(
            feats[0], [0.25, np.sin(np.pi / 4), np.sin(np.pi / 2), np.cos(np.pi / 4), 0.0],
            atol=1e-15,
        )

    def test_init_is_deterministic(self) -> None:
        a, b = _net(seed=3), _net(seed=3)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_input_width_must_match(self) -> None:
        with pytest.raises(DomainError, match="input width"):
            ScoreNet.init([4, 8, DIM], 0, time_features=K)

    def test_unknown_activation(self) -> None:
        with pytest.raises(DomainError):
            ScoreNet.init([DIM + 1, DIM], 0, activation="relu", time_features=0)

    def test_forward_shape(self, batch) -> None:
        y, s = batch
        assert _net().forward(y, s).shape == (5, DIM)
        assert _net().forward(y, 0.5).shape == (5, DIM)

    def test_wrong_point_dimension(self) -> None:
        with pytest.raises(DomainError):
            _net().forward(np.zeros((2, 3)), 0.5)

    def test_non_finite_output_raises(self) -> None:
        net = _net()
        params = dict(net.params)
        params["b3"] = np.array([np.inf, 0.0])
        with pytest.raises(NumericError):
            net.with_params(params).forward(np.zeros((1, DIM)), 0.5)


# ---------------------------------------------------------------------------
# Reverse mode
# ---------------------------------------------------------------------------


class TestVjp:
    @pytest.mark.parametrize("activation", ["swish", "tanh"])
    def test_parameter_gradients_match_finite_differences(self, batch, activation) -> None:
        y, s = batch
        net = _net(activation)
        cot = np.random.default_rng(1).standard_normal((5, DIM))
        grads, _ = net.vjp(y, s, cot)
        for name in net.params:
            fd = _central_diff(net, lambda m: float(np.sum(cot * m.forward(y, s))), name)
            np.testing.assert_allclose(grads[name], fd, rtol=1e-5, atol=1e-8)

    def test_input_gradient_matches_finite_differences(self, batch) -> None:
        y, s = batch
        net = _net()
        cot = np.random.default_rng(2).standard_normal((5, DIM))
        _, ygrad = net.vjp(y, s, cot)
        h = 1e-6
        for j in range(DIM):
            step = np.zeros(DIM)
            step[j] = h
            fd = np.sum(cot * (net.forward(y + step, s) - net.forward(y - step, s)), axis=1)
            np.testing.assert_allclose(ygrad[:, j], fd / (2 * h), rtol=1e-5, atol=1e-8)


# ---------------------------------------------------------------------------
# Divergences
# ---------------------------------------------------------------------------


class TestDivergence:
    def test_exact_divergence_matches_jacobian_trace(self, batch) -> None:
        y, s = batch
        net = _net()
        h = 1e-6
        trace = np.zeros(5)
        for j in range(DIM):
            step = np.zeros(DIM)
            step[j] = h
            trace += (net.forward(y + step, s)[:, j] - net.forward(y - step, s)[:, j]) / (2 * h)
        np.testing.assert_allclose(net.divergence_exact(y, s), trace, rtol=1e-5, atol=1e-8)

    def test_hutchinson_is_within_three_stderr(self, batch) -> None:
        y, s = batch
        net = _net()
        est, se = net.divergence_hutchinson(y[:1], s[:1], 4000, np.random.default_rng(0))
        assert abs(est[0] - net.divergence_exact(y[:1], s[:1])[0]) <= 4 * se[0] + 1e-12

    def test_single_probe_reports_nan_stderr(self, batch, caplog) -> None:
        y, s = batch
        with caplog.at_level(logging.WARNING, logger="sdelbo.score_net"):
            _, se = _net().divergence_hutchinson(y, s, 1, np.random.default_rng(0))
        assert np.all(np.isnan(se))
        assert "single probe" in caplog.text

    def test_zero_probes_rejected(self, batch) -> None:
        y, s = batch
        with pytest.raises(DomainError):
            _net().probe_samples(y, s, 0, np.random.default_rng(0))

    def test_identity_map_probe_is_exactly_d(self) -> None:
        width = DIM + 1 + 2 * K
        net = ScoreNet(
            [width, DIM], {"W1": np.eye(DIM, width), "b1": np.zeros(DIM)}, time_features=K
        )
        y = np.random.default_rng(0).standard_normal((4, DIM))
        samples = net.probe_samples(y, 0.3, 5, np.random.default_rng(1))
        np.testing.assert_array_equal(samples, float(DIM))
        np.testing.assert_array_equal(net.divergence_exact(y, 0.3), float(DIM))

    def test_probe_trace_grad_matches_finite_differences(self, batch) -> None:
        y, s = batch
        net = _net()
        rng = np.random.default_rng(4)
        v = rng.choice(np.array([-1.0, 1.0]), size=(5, DIM))
        w = rng.uniform(0.5, 1.5, size=5)
        values, grads = net.probe_trace_grad(y, s, v, w)
        _, ygrad = net.vjp(y, s, v)
        np.testing.assert_allclose(values, np.sum(v * ygrad, axis=1), rtol=1e-10, atol=1e-12)
        for name in net.params:
            fd = _central_diff(
                net, lambda m: float(np.sum(w * m.probe_trace_grad(y, s, v, w)[0])), name
            )
            np.testing.assert_allclose(grads[name], fd, rtol=1e-5, atol=1e-8)


# ---------------------------------------------------------------------------
# NetScore and checkpoints
# ---------------------------------------------------------------------------


class TestNetScore:
    def test_drift_a_divides_by_g(self, batch) -> None:
        y, _ = batch
        sde = VpSde()
        net = _net()
        model = NetScore(net, sde, "drift_a")
        np.testing.assert_allclose(
            model.score(y, 0.5), net.forward(y, 0.5) / np.sqrt(sde.beta(0.5))
        )
        np.testing.assert_allclose(
            model.divergence(y, 0.5), net.divergence_exact(y, 0.5) / np.sqrt(sde.beta(0.5))
        )

    def test_score_parameterization_is_identity(self, batch) -> None:
        y, s = batch
        net = _net()
        np.testing.assert_allclose(NetScore(net, VpSde(), "score").score(y, s), net.forward(y, s))

    def test_unknown_parameterization(self) -> None:
        with pytest.raises(DomainError):
            NetScore(_net(), VpSde(), "epsilon")

    def test_passes_audit(self) -> None:
        audit(NetScore(_net(), VpSde()))

    def test_is_not_exact(self) -> None:
        assert NetScore(_net(), VpSde()).exact is False


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path) -> None:
        net = _net(seed=7)
        ckpt = Checkpoint(net=net, sde=VpSde(0.2, 15.0), parameterize="score", config_hash="abc")
        path = save_checkpoint(tmp_path / "ckpt.yaml", ckpt)
        loaded = load_checkpoint(path)
        assert loaded.sde == VpSde(0.2, 15.0)
        assert loaded.parameterize == "score"
        assert loaded.config_hash == "abc"
        for name in net.params:
            np.testing.assert_array_equal(loaded.net.params[name], net.params[name])

    def test_missing_checkpoint(self, tmp_path) -> None:
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope.yaml")

    def test_foreign_document_is_rejected(self, tmp_path) -> None:
        path = tmp_path / "other.yaml"
        path.write_text("format: something-else\n", encoding="utf-8")
        with pytest.raises(DomainError):
            load_checkpoint(path)
