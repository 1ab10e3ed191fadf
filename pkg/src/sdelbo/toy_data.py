"""
toy_data.py — Deterministic low-dimensional datasets.

Every generator is a pure function of ``(n, seed, ...)``: regenerating with
the same arguments is bit-identical. Standardized datasets keep the per-column
mean and std they were divided by, so samples can be mapped back.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sdelbo.errors import DomainError
from sdelbo.vp_sde import GaussianOracle, VpSde

logger = logging.getLogger(__name__)

DATASETS = ("swiss_roll", "gaussian_mixture", "gaussian")
HOLDOUT_FRACTION = 0.1

_ROLL_SCALE = 4.5 * math.pi


@dataclass(frozen=True, eq=False)
class Dataset:
    """Points with provenance and the standardization applied to them."""

    points: np.ndarray
    name: str
    seed: int
    mean: np.ndarray
    std: np.ndarray
    labels: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def unstandardize(self, points: np.ndarray | None = None) -> np.ndarray:
        """Map standardized *points* (default: this dataset's) back to raw units."""
        points = self.points if points is None else np.asarray(points, dtype=np.float64)
        return points * self.std + self.mean


def _standardize(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if raw.shape[0] == 0:
        return raw, np.zeros(raw.shape[1]), np.ones(raw.shape[1])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return (raw - mean) / std, mean, std


def _finish(
    raw: np.ndarray, name: str, seed: int, standardize: bool, labels: np.ndarray | None = None
) -> Dataset:
    if standardize:
        points, mean, std = _standardize(raw)
    else:
        points, mean, std = raw, np.zeros(raw.shape[1]), np.ones(raw.shape[1])
    return Dataset(points=points, name=name, seed=seed, mean=mean, std=std, labels=labels)


def swiss_roll(
    n: int, noise_std: float = 0.05, seed: int = 0, *, standardize: bool = True
) -> Dataset:
    """2-D Swiss roll: t = 1.5π(1 + 2u), point (t cos t, t sin t)/(4.5π) plus noise.

    Examples:
        >>> swiss_roll(0).points.shape
        (0, 2)
    """
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if noise_std < 0.0:
        raise DomainError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    t = 1.5 * math.pi * (1.0 + 2.0 * rng.uniform(size=n))
    raw = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / _ROLL_SCALE
    raw = raw + noise_std * rng.standard_normal((n, 2))
    return _finish(raw, "swiss_roll", seed, standardize)


def gaussian_mixture(
    centers: np.ndarray,
    weights: np.ndarray,
    cov_scale: float,
    n: int,
    seed: int = 0,
    *,
    standardize: bool = False,
) -> Dataset:
    """Isotropic Gaussian mixture; ``labels`` holds each point's component.

    Raises:
        DomainError: If the weights are negative, do not sum to one, or do
            not match the centers.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (centers.shape[0],):
        raise DomainError(f"need one weight per center, got {weights.shape} for {centers.shape}")
    if np.any(weights < 0.0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-9):
        raise DomainError(f"weights must be non-negative and sum to 1, got {weights.tolist()}")
    if cov_scale <= 0.0 or n < 0:
        raise DomainError(f"need cov_scale > 0 and n >= 0, got {cov_scale}, {n}")
    rng = np.random.default_rng(seed)
    labels = rng.choice(centers.shape[0], size=n, p=weights)
    raw = centers[labels] + math.sqrt(cov_scale) * rng.standard_normal((n, centers.shape[1]))
    return _finish(raw, "gaussian_mixture", seed, standardize, labels)


def gaussian_reference(
    n: int,
    seed: int = 0,
    *,
    mean: np.ndarray | None = None,
    cov: np.ndarray | None = None,
    dim: int = 2,
    sde: VpSde | None = None,
) -> tuple[Dataset, GaussianOracle]:
    """Unstandardized N(mean, cov) data together with its closed-form oracle."""
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64)
    cov = np.eye(mean.shape[0]) if cov is None else np.asarray(cov, dtype=np.float64)
    oracle = GaussianOracle(mean, cov, sde if sde is not None else VpSde())
    points = oracle.sample(n, np.random.default_rng(seed))
    return _finish(points, "gaussian", seed, standardize=False), oracle


def train_test_split(
    dataset: Dataset, holdout: float = HOLDOUT_FRACTION
) -> tuple[Dataset, Dataset]:
    """Hold out the last ``holdout`` fraction of the points."""
    if not 0.0 < holdout < 1.0:
        raise DomainError(f"holdout must lie in (0, 1), got {holdout}")
    cut = dataset.n - int(round(holdout * dataset.n))

    def part(rows: slice) -> Dataset:
        labels = None if dataset.labels is None else dataset.labels[rows]
        return Dataset(
            points=dataset.points[rows],
            name=dataset.name,
            seed=dataset.seed,
            mean=dataset.mean,
            std=dataset.std,
            labels=labels,
        )

    return part(slice(0, cut)), part(slice(cut, None))


def make_dataset(
    name: str,
    n: int,
    seed: int,
    *,
    noise_std: float = 0.05,
    dim: int = 2,
    centers: list[list[float]] | None = None,
    weights: list[float] | None = None,
    cov_scale: float = 0.1,
    standardize: bool = True,
) -> Dataset:
    """Build a dataset by name from run-config fields."""
    if name == "swiss_roll":
        return swiss_roll(n, noise_std, seed, standardize=standardize)
    if name == "gaussian_mixture":
        centers = centers if centers is not None else [[-2.0, 0.0], [2.0, 0.0]]
        weights = weights if weights is not None else [1.0 / len(centers)] * len(centers)
        return gaussian_mixture(centers, weights, cov_scale, n, seed, standardize=standardize)
    if name == "gaussian":
        return gaussian_reference(n, seed, dim=dim)[0]
    raise DomainError(f"unknown dataset {name!r}; choose one of {DATASETS}")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def save_csv(dataset: Dataset, path: str | Path) -> Path:
    """Write points as CSV behind a ``#`` comment line carrying the provenance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "name": dataset.name,
        "seed": dataset.seed,
        "n": dataset.n,
        "mean": dataset.mean.tolist(),
        "std": dataset.std.tolist(),
    }
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(dataset.dim)])
        writer.writerows([repr(float(v)) for v in row] for row in dataset.points)
    logger.info("wrote %d points to %s", dataset.n, path)
    return path


def load_csv(path: str | Path) -> Dataset:
    """Read a dataset written by :func:`save_csv`."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise DomainError(f"{path} has no dataset header comment")
        header = json.loads(first[2:])
        rows = list(csv.reader(fh))
    columns = rows[0]
    points = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    points = points.reshape(-1, len(columns))
    return Dataset(
        points=points,
        name=header["name"],
        seed=int(header["seed"]),
        mean=np.asarray(header["mean"], dtype=np.float64),
        std=np.asarray(header["std"], dtype=np.float64),
    )
