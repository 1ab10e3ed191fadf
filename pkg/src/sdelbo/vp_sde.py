"""
vp_sde.py — The variance-preserving inference SDE and its Gaussian oracle.

    dY = -½β(s) Y ds + √β(s) dB̂,    β(s) = β_min + (β_max - β_min) s / T

The conditional kernel q(y_s | y_0) is N(m_s y_0, v_s I) with
m_s = exp(-A(s)/2), v_s = 1 - exp(-A(s)) and A = ∫β. For Gaussian data the
marginal stays Gaussian, which makes :class:`GaussianOracle` the ground truth
for every estimator in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from overrides import override

from sdelbo.errors import DegenerateKernelError, DomainError
from sdelbo.score_model import ScoreModel

# Slack for times produced by float grids that should land exactly on 0 or T.
_TIME_SLACK = 1e-12


def _column(values: np.ndarray | float) -> np.ndarray | float:
    """Lift a per-row ``(n,)`` coefficient so it broadcasts against ``(n, d)``."""
    arr = np.asarray(values, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


@dataclass(frozen=True, eq=False)
class PerturbationKernel:
    """Gaussian conditional q(y_s | y_0) = N(mean_coef · y_0, std² I).

    Fields broadcast: a vector of times gives vectors of coefficients.
    """

    mean_coef: np.ndarray | float
    std: np.ndarray | float
    time: np.ndarray | float

    @property
    def var(self) -> np.ndarray | float:
        return np.square(self.std)


@dataclass(frozen=True)
class VpSde:
    """Variance-preserving SDE with affine β schedule on [0, T].

    Args:
        beta_min: β(0), strictly positive.
        beta_max: β(T), strictly greater than ``beta_min``.
        horizon: T, strictly positive.

    Raises:
        DomainError: If the constants violate ``0 < beta_min < beta_max`` or
            ``horizon > 0``.

    Examples:
        >>> sde = VpSde()
        >>> sde.beta(0.5)
        10.05
        >>> round(float(sde.int_beta(1.0)), 12)
        10.05
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.beta_min < self.beta_max:
            raise DomainError(
                f"need 0 < beta_min < beta_max, got beta_min={self.beta_min}, "
                f"beta_max={self.beta_max}"
            )
        if not self.horizon > 0.0:
            raise DomainError(f"horizon T must be > 0, got {self.horizon}")

    # -- schedule -----------------------------------------------------------

    def check_time(self, s: np.ndarray | float) -> np.ndarray:
        """Return *s* as a float array, raising if any entry leaves [0, T]."""
        arr = np.asarray(s, dtype=np.float64)
        slack = _TIME_SLACK * self.horizon
        if np.any(~np.isfinite(arr)) or np.any(arr < -slack) or np.any(arr > self.horizon + slack):
            bad = arr[(~np.isfinite(arr)) | (arr < -slack) | (arr > self.horizon + slack)]
            raise DomainError(
                f"time s={bad.ravel()[0]!r} is outside [0, T={self.horizon}]"
            )
        return np.clip(arr, 0.0, self.horizon)

    @property
    def _slope(self) -> float:
        return (self.beta_max - self.beta_min) / self.horizon

    def beta(self, s: np.ndarray | float) -> np.ndarray | float:
        """β(s) = β_min + (β_max − β_min)·s/T."""
        s = self.check_time(s)
        out = self.beta_min + self._slope * s
        return float(out) if out.ndim == 0 else out

    def int_beta(self, s: np.ndarray | float) -> np.ndarray | float:
        """A(s) = ∫₀ˢ β = β_min·s + ½(β_max − β_min)·s²/T."""
        s = self.check_time(s)
        out = self.beta_min * s + 0.5 * self._slope * s * s
        return float(out) if out.ndim == 0 else out

    def inv_int_beta(self, a: np.ndarray | float) -> np.ndarray | float:
        """Solve A(s) = a for s ∈ [0, T].

        Uses the rationalized root 2a / (β_min + √(β_min² + 2·slope·a)), which
        avoids the cancellation of the textbook quadratic formula near a = 0.
        """
        a = np.asarray(a, dtype=np.float64)
        if np.any(a < 0.0):
            raise DomainError(f"int_beta values must be >= 0, got min {a.min()!r}")
        out = 2.0 * a / (self.beta_min + np.sqrt(self.beta_min**2 + 2.0 * self._slope * a))
        out = np.clip(out, 0.0, self.horizon)
        return float(out) if out.ndim == 0 else out

    def drift_f(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        """f(y, s) = −½β(s)·y; per-row times broadcast over columns."""
        return -0.5 * _column(self.beta(s)) * np.asarray(y, dtype=np.float64)

    def drift_f_divergence(self, s: np.ndarray | float, dim: int) -> np.ndarray | float:
        """∇·f = −½β(s)·d, in closed form."""
        return -0.5 * np.asarray(self.beta(s)) * dim

    def diffusion_g(self, s: np.ndarray | float) -> np.ndarray | float:
        """g(s) = √β(s)."""
        return np.sqrt(self.beta(s))

    # -- perturbation kernel ------------------------------------------------

    def kernel(self, s: np.ndarray | float) -> PerturbationKernel:
        a = np.asarray(self.int_beta(s))
        mean_coef = np.exp(-0.5 * a)
        std = np.sqrt(-np.expm1(-a))
        return PerturbationKernel(mean_coef=mean_coef, std=std, time=np.asarray(s))

    def mean_coef(self, s: np.ndarray | float) -> np.ndarray | float:
        """m_s = exp(−A(s)/2)."""
        return np.exp(-0.5 * np.asarray(self.int_beta(s)))

    def cond_var(self, s: np.ndarray | float) -> np.ndarray | float:
        """v_s = 1 − exp(−A(s)), the exact conditional variance."""
        return -np.expm1(-np.asarray(self.int_beta(s)))

    def transition(self, s: float, s_next: float) -> tuple[float, float]:
        """Exact one-step kernel of the forward SDE from *s* to *s_next*.

        Returns ``(r, c)`` with ``y_next = r·y + c·ξ``; r = exp(−ΔA/2) and
        c² = 1 − exp(−ΔA), where ΔA = A(s_next) − A(s).
        """
        delta = float(self.int_beta(s_next)) - float(self.int_beta(s))
        if delta < 0.0:
            raise DomainError(f"transition needs s_next >= s, got {s} -> {s_next}")
        return math.exp(-0.5 * delta), math.sqrt(-math.expm1(-delta))

    def conditional_fisher(self, s: np.ndarray | float, dim: int) -> np.ndarray | float:
        """I(q(·|y_0)) under the g²-norm: g(s)²·d / v_s."""
        s = self._positive_time(s)
        return np.asarray(self.beta(s)) * dim / self.cond_var(s)

    def _positive_time(self, s: np.ndarray | float) -> np.ndarray:
        s = self.check_time(s)
        if np.any(s <= 0.0):
            raise DegenerateKernelError(
                "the perturbation kernel is degenerate at s=0 (v_s=0); "
                "sample times from (0, T]"
            )
        return s

    def perturb(
        self, y0: np.ndarray, s: np.ndarray | float, noise: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Draw y_s = m_s·y0 + √v_s·noise and return it with ∇log q(y_s | y0).

        Args:
            y0: Clean points, ``(d,)`` or ``(n, d)``.
            s: Time(s) in (0, T]; ``(n,)`` for per-row times.
            noise: Standard-normal draws shaped like *y0*.

        Returns:
            ``(y_s, cond_score)`` with ``cond_score = −noise/√v_s``.

        Raises:
            DegenerateKernelError: If any time is 0.
            DomainError: If *noise* and *y0* shapes differ.
        """
        y0 = np.asarray(y0, dtype=np.float64)
        noise = np.asarray(noise, dtype=np.float64)
        if y0.shape != noise.shape:
            raise DomainError(f"noise shape {noise.shape} does not match y0 shape {y0.shape}")
        s = self._positive_time(s)
        kern = self.kernel(s)
        std = _column(kern.std)
        y_s = _column(kern.mean_coef) * y0 + std * noise
        return y_s, -noise / std


@dataclass(frozen=True, eq=False)
class GaussianOracle:
    """Closed-form marginals of Gaussian data N(mean0, cov0) under a :class:`VpSde`.

    The marginal at time s is N(m_s·mean0, m_s²·cov0 + v_s·I).

    Raises:
        DomainError: If *cov0* is not a symmetric positive-definite ``(d, d)``
            matrix matching *mean0*.
    """

    mean0: np.ndarray
    cov0: np.ndarray
    sde: VpSde = field(default_factory=VpSde)

    def __post_init__(self) -> None:
        mean0 = np.atleast_1d(np.asarray(self.mean0, dtype=np.float64))
        cov0 = np.atleast_2d(np.asarray(self.cov0, dtype=np.float64))
        d = mean0.shape[0]
        if mean0.ndim != 1 or cov0.shape != (d, d):
            raise DomainError(f"cov0 must be ({d}, {d}) to match mean0, got {cov0.shape}")
        if not np.allclose(cov0, cov0.T, rtol=0.0, atol=1e-12):
            raise DomainError("cov0 must be symmetric")
        try:
            np.linalg.cholesky(cov0)
        except np.linalg.LinAlgError as exc:
            raise DomainError("cov0 must be positive definite") from exc
        object.__setattr__(self, "mean0", mean0)
        object.__setattr__(self, "cov0", cov0)

    @classmethod
    def standard(cls, dim: int, sde: VpSde | None = None) -> GaussianOracle:
        """Oracle for N(0, I_dim) data, stationary under the VP-SDE."""
        return cls(np.zeros(dim), np.eye(dim), sde if sde is not None else VpSde())

    @property
    def dim(self) -> int:
        return int(self.mean0.shape[0])

    def marginal(self, s: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of q(·, s).

        A scalar time gives ``(d,)`` and ``(d, d)``; a vector of n times gives
        ``(n, d)`` and ``(n, d, d)``.
        """
        s = self.sde.check_time(s)
        m = np.asarray(self.sde.mean_coef(s))
        v = np.asarray(self.sde.cond_var(s))
        eye = np.eye(self.dim)
        if s.ndim == 0:
            return float(m) * self.mean0, float(m) ** 2 * self.cov0 + float(v) * eye
        mean = m[:, None] * self.mean0[None, :]
        cov = (m**2)[:, None, None] * self.cov0[None] + v[:, None, None] * eye[None]
        return mean, cov

    def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        """∇log q(y, s) = −Σ_s⁻¹ (y − mean_s)."""
        y = np.asarray(y, dtype=np.float64)
        mean, cov = self.marginal(s)
        diff = y - mean
        if cov.ndim == 2:
            return -np.linalg.solve(cov, np.atleast_2d(diff).T).T.reshape(y.shape)
        return -np.linalg.solve(cov, diff[..., None])[..., 0]

    def logpdf(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray | float:
        """log q(y, s) in nats; one value per row of *y*."""
        y = np.asarray(y, dtype=np.float64)
        mean, cov = self.marginal(s)
        diff = np.atleast_2d(y - mean)
        chol = np.linalg.cholesky(cov)
        if cov.ndim == 2:
            white = np.linalg.solve(chol, diff.T).T
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        else:
            white = np.linalg.solve(chol, diff[..., None])[..., 0]
            logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
        out = -0.5 * (np.sum(white**2, axis=-1) + logdet + self.dim * math.log(2.0 * math.pi))
        return float(out[0]) if y.ndim == 1 else out

    def precision_trace(self, s: np.ndarray | float) -> np.ndarray | float:
        """tr(Σ_s⁻¹), the negated divergence of the marginal score."""
        _, cov = self.marginal(s)
        return np.trace(np.linalg.inv(cov), axis1=-2, axis2=-1)

    def fisher_information(self, s: np.ndarray | float) -> np.ndarray | float:
        """I(q(·, s)) = E‖∇log q‖² under the g²-norm, which is g²·tr(Σ_s⁻¹)."""
        return np.asarray(self.sde.beta(s)) * self.precision_trace(s)

    def sample(self, n: int, rng: np.random.Generator, s: float = 0.0) -> np.ndarray:
        """Draw *n* points from q(·, s)."""
        mean, cov = self.marginal(s)
        return rng.multivariate_normal(mean, cov, size=n, method="cholesky")


class OracleScore(ScoreModel):
    """The exact marginal score of a :class:`GaussianOracle` as a ScoreModel."""

    exact = True

    def __init__(self, oracle: GaussianOracle) -> None:
        self.oracle = oracle
        self.dim = oracle.dim

    @override
    def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        return self.oracle.score(np.atleast_2d(y), s)

    @override
    def divergence(
        self,
        y: np.ndarray,
        s: np.ndarray | float,
        *,
        rng: np.random.Generator | None = None,
        probes: int = 0,
    ) -> np.ndarray:
        y = np.atleast_2d(y)
        n = y.shape[0]
        if probes == 0:
            return np.broadcast_to(-np.asarray(self.oracle.precision_trace(s)), (n,)).copy()
        if rng is None:
            raise DomainError("Hutchinson divergence needs an rng")
        _, cov = self.oracle.marginal(s)
        prec = np.broadcast_to(np.linalg.inv(cov), (n, self.dim, self.dim))
        total = np.zeros(n)
        for _ in range(probes):
            v = rng.choice(np.array([-1.0, 1.0]), size=(n, self.dim))
            total -= np.einsum("ni,nij,nj->n", v, prec, v)
        return total / probes

    @override
    def dummy_inputs(self) -> list[dict[str, object]]:
        zeros = np.zeros((3, self.dim))
        return [
            {"y": zeros, "s": 0.0},
            {"y": zeros + 1.0, "s": self.oracle.sde.horizon},
            {"y": np.ones((2, self.dim)), "s": np.array([0.25, 0.75]) * self.oracle.sde.horizon},
        ]
