"""
sampler.py — Sampling from the λ-family of plug-in reverse SDEs.

    dX = ((1 − λ/2)·g²·s_θ − f) dt + √(1 − λ)·g dB,   X_0 ~ N(0, I)

with coefficients evaluated at the inference time T − t. λ = 0 is the plug-in
reverse SDE and λ = 1 the probability-flow ODE, integrated with Heun steps.
With the exact score every member shares the data marginals; the forward
counterpart :func:`simulate_inference` lets tests compare them.
"""

from __future__ import annotations

import logging
import math
import typing as ty
from dataclasses import dataclass

import numpy as np

from sdelbo.elbo import PluginGenerativeSde
from sdelbo.errors import CapabilityError, DomainError, NumericError
from sdelbo.score_model import ScoreModel
from sdelbo.shards import run_sharded
from sdelbo.vp_sde import VpSde

logger = logging.getLogger(__name__)

SCHEMES = ("euler_maruyama", "heun_ode")
LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)
DEFAULT_STEPS = 1000

DriftFn = ty.Callable[[np.ndarray, float], np.ndarray]
DiffusionFn = ty.Callable[[float], float]


def em_step(
    drift: DriftFn,
    diffusion: DiffusionFn,
    x: np.ndarray,
    t: float,
    dt: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One Euler-Maruyama step x + drift(x, t)·dt + diffusion(t)·√dt·ξ.

    Raises:
        DomainError: If dt is not positive.
        NumericError: If the result has a non-finite entry; the message
            carries t and the offending row.
    """
    if not dt > 0.0:
        raise DomainError(f"dt must be > 0, got {dt}")
    sig = diffusion(t)
    out = x + drift(x, t) * dt
    if sig != 0.0:
        out = out + sig * math.sqrt(dt) * rng.standard_normal(x.shape)
    _check_finite(out, x, t)
    return out


def heun_step(drift: DriftFn, x: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Explicit trapezoid step for the deterministic ODE dx = drift(x, t) dt."""
    k1 = drift(x, t)
    k2 = drift(x + dt * k1, t + dt)
    out = x + 0.5 * dt * (k1 + k2)
    _check_finite(out, x, t)
    return out


def _check_finite(out: np.ndarray, x: np.ndarray, t: float) -> None:
    bad = ~np.all(np.isfinite(out), axis=-1)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite state at t={t:.6g} from x={x[row].tolist()}")


@dataclass
class LambdaSampler:
    """Reverse-time sampler for one member of the λ-family.

    Args:
        lam: λ in [0, 1].
        score: Score model plugged into the reverse drift.
        sde: Inference SDE supplying f and g.
        n_steps: Uniform steps over [0, T].
        scheme: ``"euler_maruyama"`` or ``"heun_ode"``; λ = 1 always uses
            ``"heun_ode"`` since it has no diffusion.
    """

    lam: float
    score: ScoreModel
    sde: VpSde
    n_steps: int = DEFAULT_STEPS
    scheme: str = "euler_maruyama"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.n_steps < 1:
            raise DomainError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.lam == 1.0 and self.scheme != "heun_ode":
            logger.debug("lambda=1 has no diffusion; switching to heun_ode")
            self.scheme = "heun_ode"
        self.generative = PluginGenerativeSde(self.score, self.sde, self.lam)

    @property
    def dim(self) -> int:
        return self.score.dim

    @property
    def dt(self) -> float:
        return self.sde.horizon / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.sde.horizon, self.n_steps + 1)

    def step(self, x: np.ndarray, t: float, rng: np.random.Generator) -> np.ndarray:
        if self.scheme == "heun_ode":
            return heun_step(self.generative.drift, x, t, self.dt)
        return em_step(self.generative.drift, self.generative.sigma, x, t, self.dt, rng)

    def run(self, x0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.array(x0, dtype=np.float64)
        for k in range(self.n_steps):
            x = self.step(x, k * self.dt, rng)
        return x


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Trajectories X_t on the sampler's time grid."""

    times: np.ndarray
    states: np.ndarray
    seed: int


def sample(
    sampler: LambdaSampler, n: int, rng: np.random.Generator, *, threads: int = 1
) -> np.ndarray:
    """Draw *n* samples X_T, shape ``(n, d)``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")

    def shard(lo: int, hi: int, shard_rng: np.random.Generator) -> np.ndarray:
        x0 = shard_rng.standard_normal((hi - lo, sampler.dim))
        return sampler.run(x0, shard_rng)

    out = np.concatenate(run_sharded(shard, n, rng, threads=threads))
    logger.debug("drew %d samples with lambda=%g, %d steps", n, sampler.lam, sampler.n_steps)
    return out


def sample_path(sampler: LambdaSampler, n: int, seed: int) -> SamplePath:
    """Full trajectories of *n* chains, ``states`` of shape ``(steps + 1, n, d)``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    states = np.empty((sampler.n_steps + 1, n, sampler.dim))
    states[0] = rng.standard_normal((n, sampler.dim))
    for k in range(sampler.n_steps):
        states[k + 1] = sampler.step(states[k], k * sampler.dt, rng)
    return SamplePath(times=sampler.times(), states=states, seed=seed)


def simulate_inference(
    sde: VpSde,
    lam: float,
    score: ScoreModel,
    y0: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    *,
    record_at: ty.Sequence[float] | None = None,
    threads: int = 1,
) -> np.ndarray | dict[float, np.ndarray]:
    """Forward simulation of the λ-inference SDE.

        dY = (f − (λ/2)g²∇log q) ds + √(1 − λ) g dB̂

    Args:
        sde: Inference SDE.
        lam: λ in [0, 1]; λ = 1 is integrated with Heun steps.
        score: ∇log q; must be exact when λ > 0.
        y0: Starting points, ``(n, d)``.
        n_steps: Uniform steps over [0, T].
        rng: Source of the path noise.
        record_at: Times at which to snapshot the states. Each is rounded to
            the nearest grid time.

    Returns:
        Y_T of shape ``(n, d)``; with *record_at*, a dict from each requested
        time to the states there.

    Raises:
        CapabilityError: If λ > 0 and *score* is not exact.
    """
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    if lam > 0.0 and not score.exact:
        raise CapabilityError(
            "the lambda > 0 inference SDE needs the true score grad log q; pass an exact score"
        )
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    y0 = np.atleast_2d(np.asarray(y0, dtype=np.float64))
    ds = sde.horizon / n_steps
    marks = list(record_at or [])
    indices = [int(round(r / ds)) for r in marks]
    if any(not 0 <= k <= n_steps for k in indices):
        raise DomainError(f"record_at times must lie in [0, T={sde.horizon}], got {marks}")
    diffusion = math.sqrt(1.0 - lam)

    def drift(y: np.ndarray, s: float) -> np.ndarray:
        out = sde.drift_f(y, s)
        if lam > 0.0:
            out = out - 0.5 * lam * sde.beta(s) * score.score(y, s)
        return out

    def sigma(s: float) -> float:
        return diffusion * float(sde.diffusion_g(s))

    def shard(lo: int, hi: int, shard_rng: np.random.Generator):
        y = y0[lo:hi].copy()
        snaps = {0: y.copy()}
        for k in range(n_steps):
            if lam == 1.0:
                y = heun_step(drift, y, k * ds, ds)
            else:
                y = em_step(drift, sigma, y, k * ds, ds, shard_rng)
            if k + 1 in indices:
                snaps[k + 1] = y.copy()
        return y, snaps

    parts = run_sharded(shard, y0.shape[0], rng, threads=threads)
    final = np.concatenate([part[0] for part in parts])
    if not marks:
        return final
    return {
        mark: np.concatenate([part[1][k] for part in parts])
        for mark, k in zip(marks, indices)
    }
