"""
elbo.py — Monte-Carlo likelihood bounds for diffusion models.

A generative SDE ``dX = µ(X, t) dt + σ(t) dB`` on [0, T] with a standard-normal
prior is paired with an inference drift a(y, s). Simulating the inference SDE

    dY = (−µ(Y, T − s) + σ(T − s) a(Y, s)) ds + σ(T − s) dB̂,   Y_0 = x

and accumulating ``−½‖a‖² − ∇·µ`` along the path gives the continuous-time
ELBO (CT-ELBO), a lower bound on log p(x, T). The module also provides the
Feynman-Kac density it bounds, the discrete-time hierarchical bound it is the
limit of, the plug-in and λ-family specializations for score models, and the
variational gap for generative SDEs whose marginals are known in closed form.

Every estimator shards its paths with :func:`sdelbo.shards.run_sharded`, so
results depend on the seed and never on ``threads``.
"""

from __future__ import annotations

import abc
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from overrides import EnforceOverrides, override

from sdelbo.errors import (
    CapabilityError,
    DomainError,
    EstimatorError,
    NovikovError,
    NumericError,
)
from sdelbo.score_model import ScoreModel
from sdelbo.shards import run_sharded
from sdelbo.sm_losses import LossValue
from sdelbo.vp_sde import GaussianOracle, VpSde

logger = logging.getLogger(__name__)

NOVIKOV_GUARD = 1e6
MAX_REJECT_FRACTION = 0.01
DIV_MODES = ("exact", "hutch", "hutchinson")
TRANSITIONS = ("euler", "exact")

_LOG_2PI = math.log(2.0 * math.pi)


def _probe_count(div_mode: str, probes: int) -> int:
    if div_mode not in DIV_MODES:
        raise DomainError(f"div_mode must be one of {DIV_MODES}, got {div_mode!r}")
    if div_mode == "exact":
        return 0
    if probes < 1:
        raise DomainError(f"Hutchinson divergence needs probes >= 1, got {probes}")
    return probes


def _check_counts(**counts: int) -> None:
    for name, value in counts.items():
        if value < 1:
            raise DomainError(f"{name} must be >= 1, got {value}")


def standard_normal_logpdf(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return -0.5 * (np.sum(x * x, axis=1) + x.shape[1] * _LOG_2PI)


# ---------------------------------------------------------------------------
# Generative SDEs
# ---------------------------------------------------------------------------


class GenerativeSde(abc.ABC, EnforceOverrides):
    """``dX = µ(X, t) dt + σ(t) dB`` on [0, T] from a standard-normal prior.

    σ is a scalar function of time only.
    """

    dim: int
    horizon: float

    @abc.abstractmethod
    def drift(self, x: np.ndarray, t: float) -> np.ndarray:
        """µ(x, t) for ``(n, d)`` points at generative time *t*."""
        ...

    @abc.abstractmethod
    def drift_divergence(
        self,
        x: np.ndarray,
        t: float,
        *,
        rng: np.random.Generator | None = None,
        probes: int = 0,
    ) -> np.ndarray:
        """∇·µ(x, t) per row; ``probes=0`` asks for the exact trace."""
        ...

    @abc.abstractmethod
    def sigma(self, t: float) -> float:
        ...

    def prior_logpdf(self, x: np.ndarray) -> np.ndarray:
        """log N(x; 0, I) per row."""
        return standard_normal_logpdf(x)


class LinearGenerativeSde(GenerativeSde):
    """``dX = −κX dt + σ dB`` with X_0 ~ N(0, I); every marginal is Gaussian.

    Examples:
        >>> sde = LinearGenerativeSde(kappa=1.0, noise=0.5, dim=1)
        >>> round(sde.marginal_variance(1.0), 6)
        0.243418
    """

    def __init__(self, kappa: float, noise: float, dim: int, horizon: float = 1.0) -> None:
        if noise < 0.0:
            raise DomainError(f"noise sigma must be >= 0, got {noise}")
        if dim < 1 or horizon <= 0.0:
            raise DomainError(f"need dim >= 1 and horizon > 0, got dim={dim}, horizon={horizon}")
        self.kappa = float(kappa)
        self.noise = float(noise)
        self.dim = int(dim)
        self.horizon = float(horizon)

    @override
    def drift(self, x: np.ndarray, t: float) -> np.ndarray:
        return -self.kappa * np.asarray(x, dtype=np.float64)

    @override
    def drift_divergence(
        self,
        x: np.ndarray,
        t: float,
        *,
        rng: np.random.Generator | None = None,
        probes: int = 0,
    ) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], -self.kappa * self.dim)

    @override
    def sigma(self, t: float) -> float:
        return self.noise

    def marginal_variance(self, t: float) -> float:
        """e^{−2κt} + σ²(1 − e^{−2κt})/(2κ), or 1 + σ²t when κ = 0."""
        if self.kappa == 0.0:
            return 1.0 + self.noise**2 * t
        decay = math.exp(-2.0 * self.kappa * t)
        return decay - self.noise**2 * math.expm1(-2.0 * self.kappa * t) / (2.0 * self.kappa)

    def marginal_logpdf(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(x)
        var = self.marginal_variance(t)
        return -0.5 * (np.sum(x * x, axis=1) / var + self.dim * (_LOG_2PI + math.log(var)))

    def marginal_score(self, x: np.ndarray, t: float) -> np.ndarray:
        return -np.asarray(x, dtype=np.float64) / self.marginal_variance(t)


class PluginGenerativeSde(GenerativeSde):
    """The λ-family of plug-in reverse SDEs built from a score model.

    At generative time t the inference time is s = T − t, and

        µ(x, t) = (1 − λ/2)·g(s)²·s_θ(x, s) − f(x, s),   σ(t) = √(1 − λ)·g(s).

    λ = 0 is the plug-in reverse SDE; λ = 1 is the probability-flow ODE.
    """

    def __init__(self, score: ScoreModel, sde: VpSde, lam: float = 0.0) -> None:
        if not 0.0 <= lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {lam}")
        self.score = score
        self.sde = sde
        self.lam = float(lam)
        self.dim = score.dim
        self.horizon = sde.horizon

    def _inference_time(self, t: float) -> float:
        return self.sde.horizon - t

    @override
    def drift(self, x: np.ndarray, t: float) -> np.ndarray:
        s = self._inference_time(t)
        g2 = self.sde.beta(s)
        return (1.0 - 0.5 * self.lam) * g2 * self.score.score(x, s) - self.sde.drift_f(x, s)

    @override
    def drift_divergence(
        self,
        x: np.ndarray,
        t: float,
        *,
        rng: np.random.Generator | None = None,
        probes: int = 0,
    ) -> np.ndarray:
        s = self._inference_time(t)
        g2 = self.sde.beta(s)
        div = self.score.divergence(x, s, rng=rng, probes=probes)
        return (1.0 - 0.5 * self.lam) * g2 * div - self.sde.drift_f_divergence(s, self.dim)

    @override
    def sigma(self, t: float) -> float:
        return math.sqrt(1.0 - self.lam) * float(self.sde.diffusion_g(self._inference_time(t)))


# ---------------------------------------------------------------------------
# Inference drifts
# ---------------------------------------------------------------------------


class InferenceDrift(abc.ABC, EnforceOverrides):
    """Markovian inference drift a(y, s), with s the inference time."""

    @abc.abstractmethod
    def drift(self, y: np.ndarray, s: float) -> np.ndarray:
        ...


class ZeroDrift(InferenceDrift):
    @override
    def drift(self, y: np.ndarray, s: float) -> np.ndarray:
        return np.zeros_like(np.asarray(y, dtype=np.float64))


class ScoreDrift(InferenceDrift):
    """a = g(s)·s_θ(y, s).

    Paired with the λ = 0 plug-in SDE the inference SDE is dY = f ds + g dB̂.
    """

    def __init__(self, score: ScoreModel, sde: VpSde) -> None:
        self.score = score
        self.sde = sde

    @override
    def drift(self, y: np.ndarray, s: float) -> np.ndarray:
        return self.sde.diffusion_g(s) * self.score.score(y, s)


class LambdaDrift(InferenceDrift):
    """Inference drift of the λ-family.

        a = [(1 − λ)·g·s_θ + (λ/2)·g·(s_θ − ∇log q)] / √(1 − λ)

    paired with :class:`PluginGenerativeSde` of the same λ, this makes the
    inference SDE dY = (f − (λ/2)g²∇log q) ds + √(1 − λ) g dB̂.
    """

    def __init__(
        self, score: ScoreModel, true_score: ScoreModel, sde: VpSde, lam: float
    ) -> None:
        if not 0.0 <= lam < 1.0:
            raise DomainError(f"lambda must lie in [0, 1) for the inference drift, got {lam}")
        self.score = score
        self.true_score = true_score
        self.sde = sde
        self.lam = float(lam)

    @override
    def drift(self, y: np.ndarray, s: float) -> np.ndarray:
        g = self.sde.diffusion_g(s)
        est = self.score.score(y, s)
        if self.lam == 0.0:
            return g * est
        err = est - self.true_score.score(y, s)
        return g * ((1.0 - self.lam) * est + 0.5 * self.lam * err) / math.sqrt(1.0 - self.lam)


class OptimalLinearDrift(InferenceDrift):
    """a(y, s) = σ·∇log p(y, T − s) + offset for a :class:`LinearGenerativeSde`.

    With no offset the variational gap is zero; a constant offset c gives a
    gap of ½‖c‖²T.
    """

    def __init__(self, generative: LinearGenerativeSde, offset: np.ndarray | None = None) -> None:
        self.generative = generative
        self.offset = (
            np.zeros(generative.dim) if offset is None else np.asarray(offset, dtype=np.float64)
        )

    @override
    def drift(self, y: np.ndarray, s: float) -> np.ndarray:
        t = self.generative.horizon - s
        return self.generative.noise * self.generative.marginal_score(y, t) + self.offset


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElboTerms:
    """Path averages of the ELBO parts: mean = prior − quad − div − martingale.

    ``martingale_term`` is the zero-mean Girsanov control variate ∫a·dB̂ and
    stays 0 unless a control variate was requested.
    """

    prior_term: float
    quad_term: float
    div_term: float
    martingale_term: float = 0.0


@dataclass(frozen=True)
class ElboEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_steps: int
    terms: ElboTerms
    estimator: str = "ct_elbo"
    lam: float = 0.0
    per_path: np.ndarray | None = field(default=None, compare=False, repr=False)

    @classmethod
    def from_paths(
        cls,
        prior: np.ndarray,
        quad: np.ndarray,
        div: np.ndarray,
        *,
        n_steps: int,
        estimator: str,
        lam: float = 0.0,
        martingale: np.ndarray | None = None,
    ) -> ElboEstimate:
        if martingale is None:
            martingale = np.zeros_like(prior)
        per_path = prior - quad - div - martingale
        value = LossValue.from_rows(per_path)
        terms = ElboTerms(
            float(prior.mean()), float(quad.mean()), float(div.mean()), float(martingale.mean())
        )
        return cls(
            mean=terms.prior_term - terms.quad_term - terms.div_term - terms.martingale_term,
            stderr=value.stderr,
            n_paths=int(per_path.shape[0]),
            n_steps=n_steps,
            terms=terms,
            estimator=estimator,
            lam=lam,
            per_path=per_path,
        )

    def to_record(self) -> dict[str, object]:
        """JSON-ready record: estimator, lambda, counts, mean, stderr and terms."""
        return {
            "estimator": self.estimator,
            "lambda": self.lam,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "mean": self.mean,
            "stderr": self.stderr,
            "terms": asdict(self.terms),
        }


@dataclass(frozen=True)
class FkEstimate:
    """Feynman-Kac density estimate with the number of rejected paths."""

    p: float
    stderr: float
    n_paths: int
    n_rejected: int


@dataclass(frozen=True)
class GapEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_steps: int


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------


def _simulate_paths(
    generative: GenerativeSde,
    drift: InferenceDrift,
    y0: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    *,
    probes: int,
    guard: bool = True,
    control_variate: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Euler-Maruyama integration of the inference SDE from the rows of *y0*.

    Integrands are evaluated at the left endpoint of each step. Per step the
    divergence probes are drawn before the path noise.

    Returns:
        ``(y_T, prior, quad, div, martingale)`` where quad = ∫½‖a‖² ds,
        div = ∫∇·µ ds and martingale = ∫a·dB̂ (zeros unless *control_variate*).
    """
    y = np.array(y0, dtype=np.float64)
    n = y.shape[0]
    horizon = generative.horizon
    ds = horizon / n_steps
    sqrt_ds = math.sqrt(ds)
    quad = np.zeros(n)
    div = np.zeros(n)
    martingale = np.zeros(n)
    for step in range(n_steps):
        s = step * ds
        t = horizon - s
        a = drift.drift(y, s)
        mu = generative.drift(y, t)
        div += ds * generative.drift_divergence(y, t, rng=rng, probes=probes)
        quad += ds * 0.5 * np.sum(a * a, axis=1)
        sig = generative.sigma(t)
        if guard:
            running = quad + div
            bad = ~np.isfinite(running) | (np.abs(running) > NOVIKOV_GUARD)
            if np.any(bad):
                raise NovikovError(
                    f"running ELBO integrand left the {NOVIKOV_GUARD:g}-nat guard at step "
                    f"{step} (s={s:.6g}); the inference drift violates the Novikov condition"
                )
        noise = rng.standard_normal(y.shape)
        if control_variate:
            martingale += sqrt_ds * np.sum(a * noise, axis=1)
        y = y + ds * (sig * a - mu) + sig * sqrt_ds * noise
    return y, generative.prior_logpdf(y), quad, div, martingale


def _sharded_elbo(
    generative: GenerativeSde,
    drift: InferenceDrift,
    starts: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    *,
    probes: int,
    threads: int,
    estimator: str,
    lam: float = 0.0,
    control_variate: bool = False,
) -> ElboEstimate:
    def shard(lo: int, hi: int, shard_rng: np.random.Generator):
        _, prior, quad, div, martingale = _simulate_paths(
            generative,
            drift,
            starts[lo:hi],
            n_steps,
            shard_rng,
            probes=probes,
            control_variate=control_variate,
        )
        return prior, quad, div, martingale

    parts = run_sharded(shard, starts.shape[0], rng, threads=threads)
    prior, quad, div, martingale = (np.concatenate(col) for col in zip(*parts))
    estimate = ElboEstimate.from_paths(
        prior, quad, div, n_steps=n_steps, estimator=estimator, lam=lam, martingale=martingale
    )
    logger.debug(
        "%s over %d paths x %d steps: %.6f +- %.2g",
        estimator,
        estimate.n_paths,
        n_steps,
        estimate.mean,
        estimate.stderr,
    )
    return estimate


def _replicate(x: np.ndarray, dim: int, n_paths: int) -> np.ndarray:
    """Start points: a single point repeated, or one row per path."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if x.shape != (n_paths, dim):
            raise DomainError(f"start points must have shape {(n_paths, dim)}, got {x.shape}")
        return x.copy()
    x = x.reshape(-1)
    if x.shape[0] != dim:
        raise DomainError(f"point has dimension {x.shape[0]}, expected {dim}")
    return np.broadcast_to(x, (n_paths, dim)).copy()


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def fk_density(
    generative: GenerativeSde,
    x: np.ndarray,
    n_paths: int,
    n_steps: int,
    rng: np.random.Generator,
    *,
    div_mode: str = "exact",
    probes: int = 1,
    threads: int = 1,
) -> FkEstimate:
    """Feynman-Kac estimate of the marginal density p(x, T).

    Simulates ``dY = −µ(Y, T − s) ds + σ(T − s) dB`` from x and averages
    ``p_0(Y_T)·exp(−∫∇·µ ds)``. Paths with a non-finite weight are rejected.

    Raises:
        EstimatorError: If more than 1% of paths are rejected.
    """
    _check_counts(n_paths=n_paths, n_steps=n_steps)
    n_probes = _probe_count(div_mode, probes)
    starts = _replicate(x, generative.dim, n_paths)
    zero = ZeroDrift()

    def shard(lo: int, hi: int, shard_rng: np.random.Generator) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            _, prior, _, div, _ = _simulate_paths(
                generative, zero, starts[lo:hi], n_steps, shard_rng, probes=n_probes, guard=False
            )
            return np.exp(prior - div)

    weights = np.concatenate(run_sharded(shard, n_paths, rng, threads=threads))
    finite = np.isfinite(weights)
    n_rejected = int(n_paths - finite.sum())
    if n_rejected:
        logger.debug("fk_density rejected %d of %d paths", n_rejected, n_paths)
    if n_rejected > MAX_REJECT_FRACTION * n_paths:
        raise EstimatorError(
            f"fk_density rejected {n_rejected} of {n_paths} paths "
            f"(limit {MAX_REJECT_FRACTION:.0%}); reduce the step size"
        )
    value = LossValue.from_rows(weights[finite])
    return FkEstimate(p=value.mean, stderr=value.stderr, n_paths=n_paths, n_rejected=n_rejected)


def ct_elbo(
    generative: GenerativeSde,
    drift: InferenceDrift,
    x: np.ndarray,
    n_paths: int,
    n_steps: int,
    rng: np.random.Generator,
    *,
    div_mode: str = "exact",
    probes: int = 1,
    threads: int = 1,
    control_variate: bool = False,
) -> ElboEstimate:
    """Continuous-time ELBO E[log p_0(Y_T) − ∫(½‖a‖² + ∇·µ) ds] at the point x.

    With *control_variate* each path also subtracts ∫a·dB̂, which has mean
    zero and cancels most of the path noise when a is close to optimal.

    Raises:
        NovikovError: If a path's running integrand exceeds the overflow guard.
    """
    _check_counts(n_paths=n_paths, n_steps=n_steps)
    n_probes = _probe_count(div_mode, probes)
    starts = _replicate(x, generative.dim, n_paths)
    return _sharded_elbo(
        generative,
        drift,
        starts,
        n_steps,
        rng,
        probes=n_probes,
        threads=threads,
        estimator="ct_elbo",
        control_variate=control_variate,
    )


def _plugin_paths(
    score: ScoreModel,
    sde: VpSde,
    starts: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    *,
    probes: int,
    threads: int,
    transition: str = "euler",
    control_variate: bool = False,
) -> ElboEstimate:
    if transition not in TRANSITIONS:
        raise DomainError(f"transition must be one of {TRANSITIONS}, got {transition!r}")
    dim = score.dim
    ds = sde.horizon / n_steps
    sqrt_ds = math.sqrt(ds)
    # (mean factor, noise scale) per step; dB̂ = scale·ξ/g either way
    if transition == "exact":
        steps = [sde.transition(k * ds, (k + 1) * ds) for k in range(n_steps)]
    else:
        steps = [
            (None, float(sde.diffusion_g(k * ds)) * sqrt_ds) for k in range(n_steps)
        ]

    def shard(lo: int, hi: int, shard_rng: np.random.Generator):
        y = starts[lo:hi].copy()
        quad = np.zeros(y.shape[0])
        div = np.zeros(y.shape[0])
        martingale = np.zeros(y.shape[0])
        for step, (factor, scale) in enumerate(steps):
            s = step * ds
            g2 = sde.beta(s)
            est = score.score(y, s)
            div_s = score.divergence(y, s, rng=shard_rng, probes=probes)
            quad += ds * 0.5 * g2 * np.sum(est * est, axis=1)
            div += ds * (g2 * div_s + 0.5 * g2 * dim)
            running = quad + div
            if np.any(~np.isfinite(running) | (np.abs(running) > NOVIKOV_GUARD)):
                raise NovikovError(
                    f"running ELBO integrand left the {NOVIKOV_GUARD:g}-nat guard at step "
                    f"{step} (s={s:.6g}); the score model violates the Novikov condition"
                )
            noise = shard_rng.standard_normal(y.shape)
            if control_variate:
                martingale += scale * np.sum(est * noise, axis=1)
            if factor is None:
                y = y + ds * sde.drift_f(y, s) + scale * noise
            else:
                y = factor * y + scale * noise
        return standard_normal_logpdf(y), quad, div, martingale

    parts = run_sharded(shard, starts.shape[0], rng, threads=threads)
    prior, quad, div, martingale = (np.concatenate(col) for col in zip(*parts))
    return ElboEstimate.from_paths(
        prior, quad, div, n_steps=n_steps, estimator="ct_elbo_plugin", martingale=martingale
    )


def ct_elbo_plugin(
    score: ScoreModel,
    sde: VpSde,
    x: np.ndarray,
    n_paths: int,
    n_steps: int,
    rng: np.random.Generator,
    *,
    div_mode: str = "exact",
    probes: int = 1,
    threads: int = 1,
    transition: str = "euler",
    control_variate: bool = False,
) -> ElboEstimate:
    """CT-ELBO of the plug-in reverse SDE, written in terms of the score.

    The inference SDE is the fixed dY = f ds + g dB̂ and the integrand is
    ½g²‖s_θ‖² + g²∇·s_θ + ½β·d, the last term being −∇·f in closed form.

    Args:
        transition: ``"euler"`` steps the inference SDE with Euler-Maruyama;
            ``"exact"`` draws each step from the closed-form VP transition,
            which removes the O(∆s) over-dispersion of Euler paths.
        control_variate: Subtract the zero-mean ∫a·dB̂ with a = g·s_θ.
    """
    _check_counts(n_paths=n_paths, n_steps=n_steps)
    n_probes = _probe_count(div_mode, probes)
    starts = _replicate(x, score.dim, n_paths)
    return _plugin_paths(
        score, sde, starts, n_steps, rng, probes=n_probes, threads=threads,
        transition=transition, control_variate=control_variate,
    )


def _resolve_true_score(score: ScoreModel, true_score: ScoreModel | None) -> ScoreModel:
    if true_score is not None:
        if not true_score.exact:
            raise CapabilityError("true_score must be a closed-form (exact) score model")
        return true_score
    if score.exact:
        return score
    raise CapabilityError(
        "the lambda > 0 ELBO needs the true marginal score grad log q, which is "
        "only available for Gaussian oracle data; pass true_score"
    )


def ct_elbo_lambda(
    score: ScoreModel,
    sde: VpSde,
    lam: float,
    x: np.ndarray,
    n_paths: int,
    n_steps: int,
    rng: np.random.Generator,
    *,
    true_score: ScoreModel | None = None,
    div_mode: str = "exact",
    probes: int = 1,
    threads: int = 1,
    control_variate: bool = False,
) -> ElboEstimate:
    """CT-ELBO of the λ-family member of the plug-in reverse SDE.

    Raises:
        DomainError: If λ ≥ 1 (the inference drift divides by 1 − λ; use
            :func:`ode_log_likelihood` for the λ → 1 limit) or λ < 0.
        CapabilityError: If λ > 0 and no closed-form score is available.
    """
    if lam >= 1.0:
        raise DomainError(
            f"lambda={lam} >= 1: the lambda-ELBO divides by 1 - lambda; "
            "the lambda -> 1 limit is the probability-flow ODE likelihood"
        )
    if lam < 0.0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    _check_counts(n_paths=n_paths, n_steps=n_steps)
    n_probes = _probe_count(div_mode, probes)
    truth = _resolve_true_score(score, true_score) if lam > 0.0 else score
    starts = _replicate(x, score.dim, n_paths)
    return _sharded_elbo(
        PluginGenerativeSde(score, sde, lam),
        LambdaDrift(score, truth, sde, lam),
        starts,
        n_steps,
        rng,
        probes=n_probes,
        threads=threads,
        estimator="ct_elbo_lambda",
        lam=lam,
        control_variate=control_variate,
    )


def ode_log_likelihood(
    score: ScoreModel,
    sde: VpSde,
    x: np.ndarray,
    n_paths: int,
    n_steps: int,
    rng: np.random.Generator,
    *,
    div_mode: str = "exact",
    probes: int = 1,
    threads: int = 1,
) -> ElboEstimate:
    """Log-likelihood under the probability-flow ODE (λ = 1).

    With σ = 0 and a ≡ 0 the bound is tight, so this is the instantaneous
    change-of-variables formula integrated with Euler steps. Paths differ only
    through Hutchinson probes.
    """
    _check_counts(n_paths=n_paths, n_steps=n_steps)
    n_probes = _probe_count(div_mode, probes)
    starts = _replicate(x, score.dim, n_paths)
    return _sharded_elbo(
        PluginGenerativeSde(score, sde, 1.0),
        ZeroDrift(),
        starts,
        n_steps,
        rng,
        probes=n_probes,
        threads=threads,
        estimator="ode_log_likelihood",
        lam=1.0,
    )


def dataset_elbo(
    score: ScoreModel,
    sde: VpSde,
    data: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    *,
    div_mode: str = "hutch",
    probes: int = 1,
    threads: int = 1,
    transition: str = "euler",
    control_variate: bool = False,
) -> ElboEstimate:
    """Plug-in CT-ELBO averaged over a dataset, one inference path per row.

    *transition* and *control_variate* are as in :func:`ct_elbo_plugin`.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    _check_counts(n_rows=data.shape[0], n_steps=n_steps)
    if data.shape[1] != score.dim:
        raise DomainError(f"data has dimension {data.shape[1]}, expected {score.dim}")
    n_probes = _probe_count(div_mode, probes)
    estimate = _plugin_paths(
        score, sde, data, n_steps, rng, probes=n_probes, threads=threads,
        transition=transition, control_variate=control_variate,
    )
    return replace(estimate, estimator="dataset_elbo")


def variational_gap_oracle(
    drift: InferenceDrift,
    generative: GenerativeSde,
    x: np.ndarray,
    n_paths: int,
    n_steps: int,
    rng: np.random.Generator,
    *,
    threads: int = 1,
) -> GapEstimate:
    """½∫E‖a(Y_s, s) − σ∇log p(Y_s, T − s)‖² ds along inference paths from x.

    Equals log p(x, T) − E^∞ for the same drift.

    Raises:
        CapabilityError: If *generative* has no closed-form marginal score.
    """
    if not isinstance(generative, LinearGenerativeSde):
        raise CapabilityError(
            "the variational gap needs closed-form generative marginals; "
            f"{type(generative).__name__} has none"
        )
    _check_counts(n_paths=n_paths, n_steps=n_steps)
    starts = _replicate(x, generative.dim, n_paths)
    horizon = generative.horizon
    ds = horizon / n_steps
    sqrt_ds = math.sqrt(ds)

    def shard(lo: int, hi: int, shard_rng: np.random.Generator) -> np.ndarray:
        y = starts[lo:hi].copy()
        gap = np.zeros(y.shape[0])
        for step in range(n_steps):
            s = step * ds
            t = horizon - s
            sig = generative.sigma(t)
            a = drift.drift(y, s)
            resid = a - sig * generative.marginal_score(y, t)
            gap += ds * 0.5 * np.sum(resid * resid, axis=1)
            mu = generative.drift(y, t)
            y = y + ds * (sig * a - mu) + sig * sqrt_ds * shard_rng.standard_normal(y.shape)
        return gap

    value = LossValue.from_rows(np.concatenate(run_sharded(shard, n_paths, rng, threads=threads)))
    return GapEstimate(mean=value.mean, stderr=value.stderr, n_paths=n_paths, n_steps=n_steps)


def dt_elbo(
    generative: GenerativeSde,
    drift: InferenceDrift,
    x: np.ndarray,
    n_layers: int,
    n_paths: int,
    rng: np.random.Generator,
    *,
    threads: int = 1,
) -> ElboEstimate:
    """Discrete-time ELBO of the L-layer hierarchical VAE from Euler-Maruyama transitions.

    With ∆t = T/L, the decoder is p(x_{i+1} | x_i) = N(x_i + ∆t·µ(x_i, i∆t),
    ∆t·σ(i∆t)²) and the encoder is q(x_i | x_{i+1}) = N(x_{i+1} + ∆t·(−µ + σa),
    ∆t·σ((i+1)∆t)²) with µ, σ at generative time (i+1)∆t and a at inference
    time T − (i+1)∆t. The chain starts at x_L = x.

    ``quad_term`` collects the squared-residual part of each log-ratio and
    ``div_term`` the log-variance part, so the decomposition identity holds.
    Each log-ratio already carries the cross term between the encoder noise
    and the decoder residual, the discrete counterpart of ∫a·dB̂, so the
    estimate has no separate control variate.

    Raises:
        CapabilityError: If σ vanishes anywhere on the layer grid.
    """
    _check_counts(n_layers=n_layers, n_paths=n_paths)
    horizon = generative.horizon
    dt = horizon / n_layers
    sigmas = np.array([generative.sigma(i * dt) for i in range(n_layers + 1)])
    if np.any(sigmas <= 0.0):
        raise CapabilityError("the discrete-time ELBO needs sigma > 0 on every layer")
    starts = _replicate(x, generative.dim, n_paths)
    dim = generative.dim

    def shard(lo: int, hi: int, shard_rng: np.random.Generator):
        x_cur = starts[lo:hi].copy()
        quad = np.zeros(x_cur.shape[0])
        div = np.zeros(x_cur.shape[0])
        for i in range(n_layers, 0, -1):
            t = i * dt
            enc_mean = x_cur + dt * (
                sigmas[i] * drift.drift(x_cur, horizon - t) - generative.drift(x_cur, t)
            )
            enc_var = dt * sigmas[i] ** 2
            xi = shard_rng.standard_normal(x_cur.shape)
            x_prev = enc_mean + math.sqrt(enc_var) * xi
            dec_mean = x_prev + dt * generative.drift(x_prev, t - dt)
            dec_var = dt * sigmas[i - 1] ** 2
            resid = x_cur - dec_mean
            quad += 0.5 * np.sum(resid * resid, axis=1) / dec_var - 0.5 * np.sum(xi * xi, axis=1)
            div += 0.5 * dim * math.log(dec_var / enc_var)
            x_cur = x_prev
        if not np.all(np.isfinite(x_cur)):
            raise NumericError("discrete-time ELBO chain produced a non-finite state")
        return generative.prior_logpdf(x_cur), quad, div

    parts = run_sharded(shard, n_paths, rng, threads=threads)
    prior, quad, div = (np.concatenate(col) for col in zip(*parts))
    return ElboEstimate.from_paths(prior, quad, div, n_steps=n_layers, estimator="dt_elbo")


def dt_elbo_plugin(
    score: ScoreModel,
    sde: VpSde,
    x: np.ndarray,
    n_layers: int,
    n_paths: int,
    rng: np.random.Generator,
    *,
    threads: int = 1,
    transition: str = "euler",
) -> ElboEstimate:
    """DT-ELBO of the plug-in reverse SDE, written in terms of the score.

    ``transition="euler"`` is :func:`dt_elbo` with the plug-in generative SDE
    and a = g·s_θ. Its layers carry an O(1/L) bias; on N(0, I) data at
    x = (1, 1) the bound sits about 0.09 nats below log q at L = 1024.

    ``transition="exact"`` uses ancestral layers on the inference grid
    s_k = k·T/L. The encoder is the exact VP kernel
    q(y_{k+1} | y_k) = N(r·y_k, c²) and the decoder is

        p(y_k | y_{k+1}) = N((y_{k+1} + c²·s_θ(y_{k+1}, s_{k+1})) / r, c²),

    whose mean is the Tweedie posterior mean when s_θ is exact. Both
    variances equal c², so ``div_term`` is zero. On N(0, I) data with the
    exact score every path returns log q(x, 0); on other Gaussian data the
    gap to the continuous-time bound falls as O(1/L).

    Raises:
        DomainError: For an unknown *transition* or a count below 1.
        NumericError: If the chain leaves the finite range.
    """
    if transition not in TRANSITIONS:
        raise DomainError(f"transition must be one of {TRANSITIONS}, got {transition!r}")
    _check_counts(n_layers=n_layers, n_paths=n_paths)
    if transition == "euler":
        estimate = dt_elbo(
            PluginGenerativeSde(score, sde),
            ScoreDrift(score, sde),
            x,
            n_layers,
            n_paths,
            rng,
            threads=threads,
        )
        return replace(estimate, estimator="dt_elbo_plugin")
    grid = [k * sde.horizon / n_layers for k in range(n_layers + 1)]
    kernels = [sde.transition(grid[k], grid[k + 1]) for k in range(n_layers)]
    starts = _replicate(x, score.dim, n_paths)

    def shard(lo: int, hi: int, shard_rng: np.random.Generator):
        y = starts[lo:hi].copy()
        quad = np.zeros(y.shape[0])
        for k, (r, c) in enumerate(kernels):
            xi = shard_rng.standard_normal(y.shape)
            y_next = r * y + c * xi
            dec_mean = (y_next + c * c * score.score(y_next, grid[k + 1])) / r
            resid = y - dec_mean
            quad += 0.5 * np.sum(resid * resid, axis=1) / (c * c) - 0.5 * np.sum(xi * xi, axis=1)
            y = y_next
        if not np.all(np.isfinite(y)):
            raise NumericError("discrete-time ELBO chain produced a non-finite state")
        return standard_normal_logpdf(y), quad, np.zeros(y.shape[0])

    parts = run_sharded(shard, starts.shape[0], rng, threads=threads)
    prior, quad, div = (np.concatenate(col) for col in zip(*parts))
    estimate = ElboEstimate.from_paths(
        prior, quad, div, n_steps=n_layers, estimator="dt_elbo_plugin"
    )
    logger.debug(
        "dt_elbo_plugin (%s) over %d paths x %d layers: %.6f +- %.2g",
        transition,
        estimate.n_paths,
        n_layers,
        estimate.mean,
        estimate.stderr,
    )
    return estimate


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def bits_per_dim(nats: float, dim: int) -> float:
    """Convert a log-likelihood bound in nats to bits per dimension, −nats/(d·ln 2)."""
    return -nats / (dim * math.log(2.0))


def lambda_elbo_gap(lam: float) -> float:
    """Coefficient λ²/(4(1 − λ)) of the integrated ESM separating E^∞_λ from E^∞_0."""
    if not 0.0 <= lam < 1.0:
        raise DomainError(f"lambda must lie in [0, 1), got {lam}")
    return lam * lam / (4.0 * (1.0 - lam))


def integrated_esm(
    score: ScoreModel,
    oracle: GaussianOracle,
    n: int,
    rng: np.random.Generator,
    *,
    s_min: float = 0.0,
) -> LossValue:
    """∫₀ᵀ E_q[½‖s_θ − ∇log q‖²_{g²}] ds by uniform-time Monte Carlo.

    Points are drawn directly from the oracle marginal at each sampled time.
    """
    _check_counts(n=n)
    sde = oracle.sde
    s = rng.uniform(s_min, sde.horizon, size=n)
    mean, cov = oracle.marginal(s)
    chol = np.linalg.cholesky(cov)
    y_s = mean + np.einsum("nij,nj->ni", chol, rng.standard_normal((n, oracle.dim)))
    rows = esm_rows_at(score, oracle, y_s, s)
    return LossValue.from_rows((sde.horizon - s_min) * rows)


def esm_rows_at(
    score: ScoreModel, oracle: GaussianOracle, y: np.ndarray, s: np.ndarray
) -> np.ndarray:
    """Per-row ½g²‖s_θ − ∇log q‖² at given points and times."""
    resid = score.score(y, s) - oracle.score(y, s)
    return 0.5 * np.asarray(oracle.sde.beta(s)) * np.sum(resid * resid, axis=1)


__all__ = [
    "ElboEstimate",
    "ElboTerms",
    "FkEstimate",
    "GapEstimate",
    "GenerativeSde",
    "InferenceDrift",
    "LambdaDrift",
    "LinearGenerativeSde",
    "OptimalLinearDrift",
    "PluginGenerativeSde",
    "ScoreDrift",
    "ZeroDrift",
    "bits_per_dim",
    "ct_elbo",
    "ct_elbo_lambda",
    "ct_elbo_plugin",
    "dataset_elbo",
    "dt_elbo",
    "dt_elbo_plugin",
    "esm_rows_at",
    "fk_density",
    "integrated_esm",
    "lambda_elbo_gap",
    "ode_log_likelihood",
    "variational_gap_oracle",
]
