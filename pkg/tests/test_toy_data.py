"""Tests for sdelbo.toy_data."""

import math
from pathlib import Path

import numpy as np
import pytest

from sdelbo.errors import DomainError
from sdelbo.toy_data import (
    gaussian_mixture,
    gaussian_reference,
    load_csv,
    make_dataset,
    save_csv,
    swiss_roll,
    train_test_split,
)


class TestSwissRoll:
    def test_empty(self) -> None:
        dataset = swiss_roll(0)
        assert dataset.points.shape == (0, 2)
        assert dataset.n == 0

    def test_same_seed_is_bit_identical(self) -> None:
        first, again = swiss_roll(500, seed=3), swiss_roll(500, seed=3)
        np.testing.assert_array_equal(first.points, again.points)
        assert not np.array_equal(swiss_roll(500, seed=3).points, swiss_roll(500, seed=4).points)

    def test_standardized(self) -> None:
        points = swiss_roll(2000, seed=1).points
        np.testing.assert_allclose(points.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(points.std(axis=0), 1.0, atol=1e-9)

    def test_noiseless_points_lie_on_the_spiral(self) -> None:
        raw = swiss_roll(1000, noise_std=0.0, seed=2, standardize=False).points
        radius = np.hypot(raw[:, 0], raw[:, 1])
        t = radius * 4.5 * math.pi
        np.testing.assert_allclose(raw[:, 0], t * np.cos(t) / (4.5 * math.pi), atol=1e-12)
        np.testing.assert_allclose(raw[:, 1], t * np.sin(t) / (4.5 * math.pi), atol=1e-12)
        assert radius.min() >= 1.0 / 3.0 - 1e-12
        assert radius.max() <= 1.0 + 1e-12

    def test_unstandardize_round_trip(self) -> None:
        dataset = swiss_roll(300, seed=5)
        raw = swiss_roll(300, seed=5, standardize=False).points
        np.testing.assert_allclose(dataset.unstandardize(), raw, atol=1e-12)

    def test_rejects_negative_noise(self) -> None:
        with pytest.raises(DomainError):
            swiss_roll(10, noise_std=-0.1)


class TestGaussianMixture:
    def test_single_center_is_gaussian(self) -> None:
        dataset = gaussian_mixture([[1.0, -1.0]], [1.0], 0.5, 20_000, seed=0)
        points = dataset.points
        se = math.sqrt(0.5 / points.shape[0])
        assert np.all(np.abs(points.mean(axis=0) - [1.0, -1.0]) <= 4.0 * se)
        np.testing.assert_allclose(np.cov(points.T), 0.5 * np.eye(2), atol=0.03)

    def test_symmetric_centers_have_zero_mean(self) -> None:
        points = gaussian_mixture([[-2.0, 0.0], [2.0, 0.0]], [0.5, 0.5], 0.1, 20_000, 1).points
        se = points.std(axis=0, ddof=1) / math.sqrt(points.shape[0])
        assert np.all(np.abs(points.mean(axis=0)) <= 4.0 * se)

    def test_cluster_proportions(self) -> None:
        weights = np.array([0.2, 0.3, 0.5])
        centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]
        dataset = gaussian_mixture(centers, weights, 0.1, 10_000, seed=2)
        share = np.bincount(dataset.labels, minlength=3) / dataset.n
        se = np.sqrt(weights * (1.0 - weights) / dataset.n)
        assert np.all(np.abs(share - weights) <= 4.0 * se)

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [1.2, -0.2], [1.0]])
    def test_invalid_weights(self, weights: list[float]) -> None:
        with pytest.raises(DomainError, match="weight"):
            gaussian_mixture([[0.0, 0.0], [1.0, 1.0]], weights, 0.1, 10)


class TestDatasets:
    def test_gaussian_reference_pairs_with_oracle(self) -> None:
        dataset, oracle = gaussian_reference(100, seed=0, mean=np.array([3.0, 0.0]))
        assert dataset.name == "gaussian"
        np.testing.assert_array_equal(oracle.mean0, [3.0, 0.0])
        np.testing.assert_array_equal(dataset.std, [1.0, 1.0])

    def test_holdout_is_the_tail(self) -> None:
        dataset = swiss_roll(100, seed=0)
        train, held = train_test_split(dataset)
        assert (train.n, held.n) == (90, 10)
        np.testing.assert_array_equal(held.points, dataset.points[90:])

    def test_holdout_fraction_is_checked(self) -> None:
        with pytest.raises(DomainError):
            train_test_split(swiss_roll(10), holdout=1.0)

    def test_make_dataset_by_name(self) -> None:
        assert make_dataset("swiss_roll", 20, 0).name == "swiss_roll"
        assert make_dataset("gaussian_mixture", 20, 0).labels.shape == (20,)
        assert make_dataset("gaussian", 20, 0, dim=3).dim == 3
        with pytest.raises(DomainError, match="unknown dataset"):
            make_dataset("moons", 20, 0)


class TestCsv:
    def test_round_trip_keeps_provenance(self, tmp_path: Path) -> None:
        dataset = swiss_roll(50, seed=7)
        loaded = load_csv(save_csv(dataset, tmp_path / "data" / "roll.csv"))
        np.testing.assert_array_equal(loaded.points, dataset.points)
        assert (loaded.name, loaded.seed) == ("swiss_roll", 7)
        np.testing.assert_array_equal(loaded.mean, dataset.mean)

    def test_header_comment_is_required(self, tmp_path: Path) -> None:
        path = tmp_path / "bare.csv"
        path.write_text("x0,x1\n1.0,2.0\n", encoding="utf-8")
        with pytest.raises(DomainError, match="header"):
            load_csv(path)
