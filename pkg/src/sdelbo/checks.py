"""
checks.py — Property suites run by ``sdelbo check``.

Each suite is a :class:`PropertyCheck`: constructed from a bundled YAML config
(``sdelbo/configs/check/<suite>.yaml``), run with a seeded generator, and
reporting every measured value next to the tolerance it was held to. The
bundled configs carry acceptance-scale budgets; :meth:`PropertyCheck.dummy_budget`
gives the constructor overrides for a seconds-scale run of the same code.
"""

from __future__ import annotations

import abc
import logging
import math
import typing as ty
from dataclasses import asdict, dataclass, field

import numpy as np
from overrides import EnforceOverrides, override
from scipy import integrate, stats

from sdelbo.elbo import (
    LinearGenerativeSde,
    OptimalLinearDrift,
    ZeroDrift,
    ct_elbo,
    ct_elbo_lambda,
    ct_elbo_plugin,
    dt_elbo_plugin,
    fk_density,
    integrated_esm,
    lambda_elbo_gap,
    variational_gap_oracle,
)
from sdelbo.sampler import LambdaSampler, sample, simulate_inference
from sdelbo.score_net import NetScore, ScoreNet
from sdelbo.sm_losses import LossValue, dsm_rows, identity_report, make_batch
from sdelbo.time_sampler import DebiasedTimeDist, debiased_dsm_rows
from sdelbo.trainer import TrainConfig, train
from sdelbo.vp_sde import GaussianOracle, OracleScore, VpSde

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Assertion:
    """One measured quantity and the bound it must satisfy."""

    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class CheckReport:
    suite: str
    assertions: list[Assertion] = field(default_factory=list)
    tables: dict[str, list[dict[str, object]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    @property
    def failures(self) -> list[Assertion]:
        return [a for a in self.assertions if not a.passed]

    def expect_at_most(
        self, name: str, measured: float, tolerance: float, detail: str = ""
    ) -> None:
        """Record ``measured <= tolerance``; NaN never passes."""
        ok = bool(measured <= tolerance)
        self.assertions.append(Assertion(name, float(measured), float(tolerance), ok, detail))

    def expect_below(self, name: str, measured: float, bound: float, detail: str = "") -> None:
        """Record ``measured < bound``; NaN never passes."""
        ok = bool(measured < bound)
        self.assertions.append(Assertion(name, float(measured), float(bound), ok, detail))

    def expect_within(
        self, name: str, diff: float, stderr: float, *, sigmas: float = 3.0, atol: float = 1e-12
    ) -> None:
        """Record ``|diff| <= sigmas·stderr + atol``."""
        self.expect_at_most(
            name,
            abs(diff),
            sigmas * stderr + atol,
            f"difference {diff:.6g}, stderr {stderr:.3g}",
        )


class PropertyCheck(abc.ABC, EnforceOverrides):
    """A named property suite with a full budget and a small dummy budget."""

    suite: str

    @abc.abstractmethod
    def run(self, rng: np.random.Generator) -> CheckReport:
        ...

    @abc.abstractmethod
    def dummy_budget(self) -> dict[str, object]:
        """Constructor overrides that make :meth:`run` finish in seconds."""
        ...


def _combined(*stderrs: float) -> float:
    return math.sqrt(sum(s * s for s in stderrs))


def _moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample mean, its per-coordinate stderr, and the sample covariance."""
    n = x.shape[0]
    return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(n), np.cov(x, rowvar=False)


def _frobenius_rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.atleast_2d(a - b)) / np.linalg.norm(np.atleast_2d(b)))


def _random_net(dim: int, hidden: list[int], seed: int, time_features: int = 2) -> ScoreNet:
    widths = [dim + 1 + 2 * time_features, *hidden, dim]
    return ScoreNet.init(widths, seed, time_features=time_features)


# ---------------------------------------------------------------------------
# Score-matching identity
# ---------------------------------------------------------------------------


class IdentityCheck(PropertyCheck):
    """ESM − ½I = ISM = SSM = DSM − ½E[I_cond] for the oracle score and a random net."""

    suite = "identity"

    def __init__(
        self,
        n: int = 100_000,
        dim: int = 2,
        hidden: list[int] | None = None,
        net_seed: int = 0,
        probes: int = 1,
    ) -> None:
        self.n = n
        self.dim = dim
        self.hidden = list(hidden or [32, 32])
        self.net_seed = net_seed
        self.probes = probes

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"n": 2000, "hidden": [8]}

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        oracle = GaussianOracle(0.5 * np.ones(self.dim), np.diag(np.linspace(0.5, 1.5, self.dim)))
        models = {
            "oracle": OracleScore(oracle),
            "random_net": NetScore(
                _random_net(self.dim, self.hidden, self.net_seed), oracle.sde, "score"
            ),
        }
        report = CheckReport(self.suite)
        table = []
        for label, model in models.items():
            result = identity_report(model, oracle, self.n, rng, probes=self.probes)
            for row in result.rows:
                table.append({"model": label, **asdict(row)})
            for eq in result.equalities:
                report.expect_within(
                    f"{label}: {eq.lhs} = {eq.rhs}", eq.difference, eq.stderr, atol=1e-9
                )
        report.tables["identity"] = table
        return report


# ---------------------------------------------------------------------------
# Discrete-time to continuous-time consistency
# ---------------------------------------------------------------------------


class ConsistencyCheck(PropertyCheck):
    """|E^L − E^∞| shrinks over a ladder of layer counts at a Gaussian oracle.

    The data are N(data_mean, data_var·I), with data_mean defaulting to x. E^∞
    is the plug-in bound on exact VP transitions with the Girsanov control
    variate, which is unbiased for log q(x, 0). The rungs are plug-in DT-ELBOs
    with *transition* layers, each at the same path count as E^∞. Exact
    layers are tight at every L on N(0, I) data, hence the default variance
    of 0.5.
    """

    suite = "consistency"

    def __init__(
        self,
        layers: list[int] | None = None,
        n_paths: int = 65536,
        ct_steps: int = 1000,
        x: list[float] | None = None,
        data_mean: list[float] | None = None,
        data_var: float = 0.5,
        transition: str = "exact",
        final_tolerance: float = 1e-2,
        threads: int = 1,
    ) -> None:
        self.layers = list(layers or [16, 64, 256, 1024])
        self.n_paths = n_paths
        self.ct_steps = ct_steps
        self.x = np.asarray(x if x is not None else [1.0, 1.0], dtype=np.float64)
        self.data_mean = np.asarray(
            data_mean if data_mean is not None else self.x, dtype=np.float64
        )
        self.data_var = data_var
        self.transition = transition
        self.final_tolerance = final_tolerance
        self.threads = threads

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"layers": [4, 16], "n_paths": 256, "ct_steps": 200, "final_tolerance": 1.0}

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        dim = self.x.shape[0]
        oracle = GaussianOracle(self.data_mean, self.data_var * np.eye(dim))
        score = OracleScore(oracle)
        reference = float(oracle.logpdf(self.x, 0.0))
        ct = ct_elbo_plugin(
            score,
            oracle.sde,
            self.x,
            self.n_paths,
            self.ct_steps,
            rng,
            threads=self.threads,
            transition="exact",
            control_variate=True,
        )
        report = CheckReport(self.suite)
        report.expect_within("CT-ELBO = log q(x, 0)", ct.mean - reference, ct.stderr)
        ladder = []
        previous = math.inf
        for n_layers in self.layers:
            est = dt_elbo_plugin(
                score,
                oracle.sde,
                self.x,
                n_layers,
                self.n_paths,
                rng,
                threads=self.threads,
                transition=self.transition,
            )
            gap = abs(est.mean - ct.mean)
            ladder.append(
                {"layers": n_layers, "mean": est.mean, "stderr": est.stderr, "abs_diff": gap}
            )
            report.expect_below(f"|E^{n_layers} - E^inf| decreasing", gap, previous)
            previous = gap
        report.expect_at_most(f"|E^{self.layers[-1]} - E^inf|", previous, self.final_tolerance)
        ladder.append({"layers": "inf", "mean": ct.mean, "stderr": ct.stderr, "abs_diff": 0.0})
        report.tables["ladder"] = ladder
        return report


# ---------------------------------------------------------------------------
# Debiased time sampling
# ---------------------------------------------------------------------------


class DebiasCheck(PropertyCheck):
    """Inverse-CDF round trip, KS fit, normalizer by quadrature, and estimator agreement."""

    suite = "debias"

    def __init__(
        self,
        n_grid: int = 1000,
        n_ks: int = 100_000,
        n_agree: int = 100_000,
        s_eps: float = 1e-3,
        ks_tolerance: float = 0.01,
        net_seed: int = 0,
        hidden: list[int] | None = None,
    ) -> None:
        self.n_grid = n_grid
        self.n_ks = n_ks
        self.n_agree = n_agree
        self.s_eps = s_eps
        self.ks_tolerance = ks_tolerance
        self.net_seed = net_seed
        self.hidden = list(hidden or [32, 32])

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"n_grid": 50, "n_ks": 2000, "n_agree": 2000, "ks_tolerance": 0.05, "hidden": [8]}

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        sde = VpSde()
        dist = DebiasedTimeDist(sde, self.s_eps)
        report = CheckReport(self.suite)

        grid = np.linspace(1e-6, sde.horizon, self.n_grid)
        round_trip = np.max(np.abs(np.asarray(dist.inv_cdf(dist.cdf(grid))) - grid))
        report.expect_at_most("inv_cdf(cdf(s)) round trip", round_trip, 1e-9)

        draws, _ = dist.sample(self.n_ks, rng)
        ks = stats.kstest(draws, dist.cdf).statistic
        report.expect_at_most("KS distance to analytic CDF", ks, self.ks_tolerance)

        body, _ = integrate.quad(
            lambda s: sde.beta(s) / sde.cond_var(s),
            self.s_eps,
            sde.horizon,
            epsabs=1e-13,
            epsrel=1e-13,
            limit=500,
            points=[min(10 * self.s_eps, 0.5)],
        )
        z_quad = dist.plateau * self.s_eps + body
        report.expect_at_most("Z vs quadrature", abs(dist.Z - z_quad), 1e-8 * max(1.0, dist.Z))

        oracle = GaussianOracle.standard(2, sde)
        model = NetScore(_random_net(2, self.hidden, self.net_seed), sde, "score")
        rows, times = debiased_dsm_rows(model, oracle.sample(self.n_agree, rng), dist, rng)
        above = LossValue.from_rows(np.where(times >= self.s_eps, rows, 0.0))
        plateau = LossValue.from_rows(np.where(times < self.s_eps, rows, 0.0))
        uniform_times = rng.uniform(self.s_eps, sde.horizon, size=self.n_agree)
        batch = make_batch(sde, oracle.sample(self.n_agree, rng), uniform_times, rng, s_min=0.0)
        uniform = LossValue.from_rows((sde.horizon - self.s_eps) * dsm_rows(model, batch))
        report.expect_within(
            "debiased vs uniform integral of DSM on [s_eps, T]",
            above.mean - uniform.mean,
            _combined(above.stderr, uniform.stderr),
        )
        s, pdf, cdf = dist.table()
        report.tables["time_density"] = [
            {"s": float(a), "pdf": float(b), "cdf": float(c)} for a, b, c in zip(s, pdf, cdf)
        ]
        report.tables["estimators"] = [
            {"estimator": "debiased_above_s_eps", "value": above.mean, "stderr": above.stderr},
            {"estimator": "debiased_plateau_bias", "value": plateau.mean, "stderr": plateau.stderr},
            {"estimator": "uniform", "value": uniform.mean, "stderr": uniform.stderr},
        ]
        return report


# ---------------------------------------------------------------------------
# Variational gap
# ---------------------------------------------------------------------------


class GapCheck(PropertyCheck):
    """Directly estimated gap equals log p − E^∞ on the 1-D linear SDE."""

    suite = "gap"

    def __init__(
        self,
        n_paths: int = 20_000,
        n_steps: int = 1000,
        kappa: float = 1.0,
        noise: float = 0.5,
        x: float = 1.0,
        offset: float = 0.5,
        threads: int = 1,
    ) -> None:
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.kappa = kappa
        self.noise = noise
        self.x = x
        self.offset = offset
        self.threads = threads

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"n_paths": 500, "n_steps": 100}

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        gen = LinearGenerativeSde(self.kappa, self.noise, dim=1)
        x = np.array([self.x])
        log_p = float(gen.marginal_logpdf(x, gen.horizon)[0])
        report = CheckReport(self.suite)
        table = []
        drifts = {
            "optimal": OptimalLinearDrift(gen),
            "zero": ZeroDrift(),
            "offset": OptimalLinearDrift(gen, np.array([self.offset])),
        }
        for label, drift in drifts.items():
            gap = variational_gap_oracle(
                drift, gen, x, self.n_paths, self.n_steps, rng, threads=self.threads
            )
            elbo = ct_elbo(gen, drift, x, self.n_paths, self.n_steps, rng, threads=self.threads)
            report.expect_within(
                f"{label}: gap = log p - E^inf",
                gap.mean - (log_p - elbo.mean),
                _combined(gap.stderr, elbo.stderr),
            )
            table.append(
                {
                    "drift": label,
                    "gap": gap.mean,
                    "gap_stderr": gap.stderr,
                    "elbo": elbo.mean,
                    "elbo_stderr": elbo.stderr,
                    "log_p": log_p,
                }
            )
        optimal, offset = table[0], table[2]
        report.expect_within("optimal drift: gap = 0", optimal["gap"], optimal["gap_stderr"])
        report.expect_within(
            "offset drift: gap = c^2 T / 2",
            offset["gap"] - 0.5 * self.offset**2 * gen.horizon,
            offset["gap_stderr"],
            atol=1e-9,
        )
        report.expect_at_most("zero drift: gap > 0", -table[1]["gap"], 0.0)
        report.tables["gap"] = table
        return report


# ---------------------------------------------------------------------------
# λ-family marginal equivalence
# ---------------------------------------------------------------------------


class LambdaEquivCheck(PropertyCheck):
    """With the exact score, every λ shares the terminal and intermediate marginals."""

    suite = "lambda-equiv"

    def __init__(
        self,
        n: int = 100_000,
        n_steps: int = 1000,
        lambdas: list[float] | None = None,
        mean0: list[float] | None = None,
        record_at: list[float] | None = None,
        cov_tolerance: float = 0.02,
        threads: int = 1,
    ) -> None:
        self.n = n
        self.n_steps = n_steps
        self.lambdas = list(lambdas if lambdas is not None else [0.0, 0.5, 1.0])
        self.mean0 = np.asarray(mean0 if mean0 is not None else [0.0, 0.0], dtype=np.float64)
        self.record_at = list(record_at if record_at is not None else [0.25, 0.5, 0.75])
        self.cov_tolerance = cov_tolerance
        self.threads = threads

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"n": 2000, "n_steps": 100, "cov_tolerance": 0.2}

    def _compare(self, report: CheckReport, label: str, a: np.ndarray, b: np.ndarray) -> None:
        mean_a, se_a, cov_a = _moments(a)
        mean_b, se_b, cov_b = _moments(b)
        for j in range(a.shape[1]):
            report.expect_within(
                f"{label}: mean[{j}]", mean_a[j] - mean_b[j], _combined(se_a[j], se_b[j])
            )
        report.expect_at_most(
            f"{label}: covariance", _frobenius_rel(cov_a, cov_b), self.cov_tolerance
        )

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        oracle = GaussianOracle(self.mean0, np.eye(self.mean0.shape[0]))
        score = OracleScore(oracle)
        report = CheckReport(self.suite)
        table = []
        samples = {}
        for lam in self.lambdas:
            sampler = LambdaSampler(lam, score, oracle.sde, self.n_steps)
            samples[lam] = sample(sampler, self.n, rng, threads=self.threads)
            mean, se, _ = _moments(samples[lam])
            table.append(
                {
                    "lambda": lam,
                    **{f"mean{j}": m for j, m in enumerate(mean)},
                    **{f"stderr{j}": s for j, s in enumerate(se)},
                }
            )
        base = self.lambdas[0]
        for lam in self.lambdas[1:]:
            self._compare(report, f"X_T lambda={lam} vs {base}", samples[lam], samples[base])
        data = oracle.sample(self.n, rng)
        self._compare(report, f"X_T lambda={base} vs data", samples[base], data)

        y0 = oracle.sample(self.n, rng)
        snaps = {
            lam: simulate_inference(
                oracle.sde,
                lam,
                score,
                y0,
                self.n_steps,
                rng,
                record_at=self.record_at,
                threads=self.threads,
            )
            for lam in self.lambdas
        }
        for lam in self.lambdas[1:]:
            for s in self.record_at:
                self._compare(
                    report, f"Y_{s} lambda={lam} vs {base}", snaps[lam][s], snaps[base][s]
                )
        report.tables["moments"] = table
        return report


# ---------------------------------------------------------------------------
# Feynman-Kac density
# ---------------------------------------------------------------------------


class FkCheck(PropertyCheck):
    """Feynman-Kac density against the linear SDE's closed-form marginal."""

    suite = "fk"

    def __init__(
        self,
        n_paths: int = 100_000,
        n_steps: int = 1000,
        kappa: float = 1.0,
        noise: float = 0.5,
        xs: list[float] | None = None,
        rel_tolerance: float = 0.02,
        threads: int = 1,
    ) -> None:
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.kappa = kappa
        self.noise = noise
        self.xs = list(xs if xs is not None else [0.0, 1.0, 2.0])
        self.rel_tolerance = rel_tolerance
        self.threads = threads

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"n_paths": 2000, "n_steps": 100, "rel_tolerance": 0.2}

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        gen = LinearGenerativeSde(self.kappa, self.noise, dim=1)
        report = CheckReport(self.suite)
        table = []
        for x in self.xs:
            exact = float(np.exp(gen.marginal_logpdf(np.array([x]), gen.horizon)[0]))
            est = fk_density(
                gen, np.array([x]), self.n_paths, self.n_steps, rng, threads=self.threads
            )
            report.expect_within(f"p({x}, T)", est.p - exact, est.stderr)
            table.append(
                {
                    "x": x,
                    "p": est.p,
                    "stderr": est.stderr,
                    "exact": exact,
                    "rejected": est.n_rejected,
                }
            )
        if 0.0 in self.xs:
            row = table[self.xs.index(0.0)]
            report.expect_at_most(
                "relative error at x=0", abs(row["p"] / row["exact"] - 1.0), self.rel_tolerance
            )
        report.tables["fk"] = table
        return report


# ---------------------------------------------------------------------------
# Gradients and divergences
# ---------------------------------------------------------------------------


class GradientsCheck(PropertyCheck):
    """Reverse mode against central differences; Hutchinson against exact traces."""

    suite = "gradients"

    def __init__(
        self,
        dim: int = 2,
        hidden: list[int] | None = None,
        n_rows: int = 8,
        fd_eps: float = 1e-5,
        fd_tolerance: float = 1e-6,
        probes: int = 10_000,
        net_seed: int = 0,
    ) -> None:
        self.dim = dim
        self.hidden = list(hidden or [16, 16])
        self.n_rows = n_rows
        self.fd_eps = fd_eps
        self.fd_tolerance = fd_tolerance
        self.probes = probes
        self.net_seed = net_seed

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"hidden": [4], "n_rows": 3, "probes": 500}

    def _fd(self, net: ScoreNet, fn: ty.Callable[[ScoreNet], float], name: str) -> np.ndarray:
        base = net.params[name]
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            values = []
            for sign in (1.0, -1.0):
                params = dict(net.params)
                bumped = base.copy()
                bumped[idx] += sign * self.fd_eps
                params[name] = bumped
                values.append(fn(net.with_params(params)))
            grad[idx] = (values[0] - values[1]) / (2.0 * self.fd_eps)
        return grad

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        net = _random_net(self.dim, self.hidden, self.net_seed)
        y = rng.standard_normal((self.n_rows, self.dim))
        s = rng.uniform(0.05, 0.95, size=self.n_rows)
        cot = rng.standard_normal((self.n_rows, self.dim))
        v = rng.choice(np.array([-1.0, 1.0]), size=(self.n_rows, self.dim))
        weight = rng.uniform(0.5, 1.5, size=self.n_rows)
        report = CheckReport(self.suite)

        def weighted_trace(m: ScoreNet) -> float:
            return float(np.sum(weight * m.probe_trace_grad(y, s, v, weight)[0]))

        grads, ygrad = net.vjp(y, s, cot)
        _, trace_grads = net.probe_trace_grad(y, s, v, weight)
        for name in net.params:
            fd = self._fd(net, lambda m: float(np.sum(cot * m.forward(y, s))), name)
            rel = np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), 1e-12)
            report.expect_at_most(f"vjp {name} vs central differences", rel, self.fd_tolerance)
            fd_trace = self._fd(net, weighted_trace, name)
            rel = np.linalg.norm(trace_grads[name] - fd_trace) / max(np.linalg.norm(fd_trace), 1e-9)
            report.expect_at_most(
                f"probe trace {name} vs central differences", rel, self.fd_tolerance
            )

        h = self.fd_eps
        fd_y = np.zeros_like(y)
        for j in range(self.dim):
            step = np.zeros(self.dim)
            step[j] = h
            diff = net.forward(y + step, s) - net.forward(y - step, s)
            fd_y[:, j] = np.sum(cot * diff, axis=1) / (2.0 * h)
        rel = np.linalg.norm(ygrad - fd_y) / max(np.linalg.norm(fd_y), 1e-12)
        report.expect_at_most("vjp input gradient vs central differences", rel, self.fd_tolerance)

        exact = net.divergence_exact(y[:1], s[:1])
        est, se = net.divergence_hutchinson(y[:1], s[:1], self.probes, rng)
        report.expect_within(
            "Hutchinson vs exact divergence", float(est[0] - exact[0]), float(se[0])
        )

        k = 2
        width = self.dim + 1 + 2 * k
        identity = ScoreNet(
            [width, self.dim],
            {"W1": np.eye(self.dim, width), "b1": np.zeros(self.dim)},
            time_features=k,
        )
        values, _ = identity.probe_trace_grad(y, s, v, weight)
        report.expect_at_most(
            "identity-map probe trace = d", float(np.max(np.abs(values - self.dim))), 0.0
        )
        report.expect_at_most(
            "identity-map exact divergence = d",
            float(np.max(np.abs(identity.divergence_exact(y, s) - self.dim))),
            0.0,
        )
        return report


# ---------------------------------------------------------------------------
# Oracle ELBO
# ---------------------------------------------------------------------------


class OracleElboCheck(PropertyCheck):
    """Plug-in CT-ELBO with the exact score recovers log q(x, 0) at x = (1, 1).

    Paths use exact VP transitions and the Girsanov control variate. With those
    the mean is unbiased at any step count and the per-path spread comes only
    from the quadratic variation of the Brownian increments (about 0.37 nats
    at 1000 steps), so a stderr of 2e-3 needs roughly 2^15 paths.
    """

    suite = "oracle-elbo"

    def __init__(
        self,
        n_paths: int = 65536,
        n_steps: int = 1000,
        x: list[float] | None = None,
        tolerance: float = 5e-3,
        max_stderr: float = 2e-3,
        threads: int = 1,
    ) -> None:
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.x = np.asarray(x if x is not None else [1.0, 1.0], dtype=np.float64)
        self.tolerance = tolerance
        self.max_stderr = max_stderr
        self.threads = threads

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"n_paths": 256, "n_steps": 100, "tolerance": 0.5, "max_stderr": 0.2}

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        oracle = GaussianOracle.standard(self.x.shape[0])
        target = float(oracle.logpdf(self.x, 0.0))
        est = ct_elbo_plugin(
            OracleScore(oracle),
            oracle.sde,
            self.x,
            self.n_paths,
            self.n_steps,
            rng,
            threads=self.threads,
            transition="exact",
            control_variate=True,
        )
        report = CheckReport(self.suite)
        report.expect_at_most("|E^inf - log q(x, 0)|", abs(est.mean - target), self.tolerance)
        report.expect_at_most("stderr", est.stderr, self.max_stderr)
        report.tables["elbo"] = [{**est.to_record(), "target": target}]
        return report


# ---------------------------------------------------------------------------
# λ-ELBO theorem
# ---------------------------------------------------------------------------


class LambdaElboCheck(PropertyCheck):
    """E[E^∞_λ] = E[E^∞_0] − λ²/(4(1 − λ))·∫ESM for a partially trained net."""

    suite = "lambda-elbo"

    def __init__(
        self,
        lambdas: list[float] | None = None,
        n_paths: int = 8192,
        n_steps: int = 1000,
        n_esm: int = 100_000,
        train_iters: int = 300,
        hidden: list[int] | None = None,
        net_seed: int = 0,
        threads: int = 1,
    ) -> None:
        self.lambdas = list(lambdas if lambdas is not None else [0.25, 0.5, 0.9])
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.n_esm = n_esm
        self.train_iters = train_iters
        self.hidden = list(hidden or [32, 32])
        self.net_seed = net_seed
        self.threads = threads

    @override
    def dummy_budget(self) -> dict[str, object]:
        return {"n_paths": 128, "n_steps": 50, "n_esm": 2000, "train_iters": 5, "hidden": [8]}

    @override
    def run(self, rng: np.random.Generator) -> CheckReport:
        oracle = GaussianOracle.standard(2)
        sde = oracle.sde
        cfg = TrainConfig(
            lr=1e-3,
            iters=self.train_iters,
            seed=self.net_seed,
            eval_every=max(self.train_iters, 1),
            eval_rows=0,
            progress=False,
            parameterize="score",
        )
        net = _random_net(2, self.hidden, self.net_seed)
        net = train(net, oracle.sample(4096, rng), sde, cfg).net
        model = NetScore(net, sde, "score")
        truth = OracleScore(oracle)
        esm = integrated_esm(model, oracle, self.n_esm, rng)
        starts = oracle.sample(self.n_paths, rng)
        seed = int(rng.integers(0, 2**63 - 1))

        def estimate(lam: float):
            return ct_elbo_lambda(
                model,
                sde,
                lam,
                starts,
                self.n_paths,
                self.n_steps,
                np.random.default_rng(seed),
                true_score=truth,
                threads=self.threads,
            )

        base = estimate(0.0)
        report = CheckReport(self.suite)
        table = [{"lambda": 0.0, "mean": base.mean, "stderr": base.stderr, "predicted": base.mean}]
        for lam in self.lambdas:
            est = estimate(lam)
            diff = LossValue.from_rows(est.per_path - base.per_path)
            coef = lambda_elbo_gap(lam)
            report.expect_within(
                f"lambda={lam}: E_lam - E_0 = -c(lam) * ESM",
                diff.mean + coef * esm.mean,
                _combined(diff.stderr, coef * esm.stderr),
            )
            report.expect_at_most(f"lambda={lam}: E_lam <= E_0", diff.mean, 3.0 * diff.stderr)
            table.append(
                {
                    "lambda": lam,
                    "mean": est.mean,
                    "stderr": est.stderr,
                    "predicted": base.mean - coef * esm.mean,
                }
            )
        report.tables["lambda_elbo"] = table
        return report


SUITES: dict[str, type[PropertyCheck]] = {
    cls.suite: cls
    for cls in (
        IdentityCheck,
        ConsistencyCheck,
        DebiasCheck,
        GapCheck,
        LambdaEquivCheck,
        FkCheck,
        GradientsCheck,
        OracleElboCheck,
        LambdaElboCheck,
    )
}
