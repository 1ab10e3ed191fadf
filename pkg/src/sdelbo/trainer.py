"""
trainer.py — Adam training of a :class:`~sdelbo.score_net.ScoreNet`.

Three objectives are supported, all in terms of the network output o with
score = c(s)·o (c = 1/g for the ``drift_a`` parameterization):

``dsm_weighted_uniform``
    ½‖√v_s·c·o + ε‖² with s ~ Uniform[s_min, T].
``dsm_debiased``
    Z·½‖√v_s·c·o + ε‖² with s ~ q_ε, an unbiased estimate of ∫ DSM ds.
``ssm``
    g²(½‖c·o‖² + c·vᵀ∂o/∂y v) with s ~ Uniform[s_min, T] and Rademacher v.

Gradients come from the network's hand-written reverse mode; the SSM trace
term uses :meth:`ScoreNet.probe_trace_grad`.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from tqdm import tqdm

from sdelbo.elbo import dataset_elbo
from sdelbo.errors import DomainError, TrainingError
from sdelbo.score_net import PARAMETERIZATIONS, NetScore, ParamGrad, ScoreNet
from sdelbo.sm_losses import LossValue
from sdelbo.time_sampler import DebiasedTimeDist, UniformTimes
from sdelbo.vp_sde import VpSde

logger = logging.getLogger(__name__)

LOSS_KINDS = ("dsm_weighted_uniform", "dsm_debiased", "ssm")
METRICS_COLUMNS = (
    "iter",
    "wall_clock_s",
    "loss_mean",
    "loss_stderr",
    "eval_elbo_mean",
    "eval_elbo_stderr",
)

# Fixed seed offset for evaluation paths, shared by every evaluation of a run.
_EVAL_STREAM = 7919


@dataclass
class TrainConfig:
    """Optimization settings; serialized into every checkpoint and metrics file."""

    loss_kind: str = "dsm_weighted_uniform"
    lr: float = 1e-4
    batch: int = 128
    iters: int = 20000
    seed: int = 0
    eval_every: int = 1000
    parameterize: str = "drift_a"
    s_min: float = 1e-5
    s_eps: float = 1e-3
    ssm_probes: int = 1
    eval_rows: int = 256
    eval_steps: int = 100
    eval_div: str = "hutch"
    record_wall_clock: bool = True
    progress: bool = True

    def validate(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise DomainError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.parameterize not in PARAMETERIZATIONS:
            raise DomainError(
                f"parameterize must be one of {PARAMETERIZATIONS}, got {self.parameterize!r}"
            )
        if not self.lr > 0.0:
            raise DomainError(f"lr must be > 0, got {self.lr}")
        if self.batch < 1 or self.iters < 0 or self.eval_every < 1:
            raise DomainError(
                f"need batch >= 1, iters >= 0 and eval_every >= 1, got batch={self.batch}, "
                f"iters={self.iters}, eval_every={self.eval_every}"
            )
        if self.ssm_probes < 1:
            raise DomainError(f"ssm_probes must be >= 1, got {self.ssm_probes}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    state: AdamState, params: dict[str, np.ndarray], grads: ParamGrad, lr: float
) -> tuple[AdamState, dict[str, np.ndarray]]:
    """One bias-corrected Adam update; inputs are left untouched.

    Raises:
        DomainError: If parameter, gradient and moment shapes disagree.
    """
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise DomainError(
            f"parameter names {sorted(params)} do not match gradients {sorted(grads)}"
        )
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m_new, v_new, p_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise DomainError(f"shape mismatch for {name}: param {p.shape}, grad {g.shape}")
        m_new[name] = b1 * state.m[name] + (1.0 - b1) * g
        v_new[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m_new[name] / (1.0 - b1**step)
        v_hat = v_new[name] / (1.0 - b2**step)
        p_new[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m_new, v=v_new, step=step), p_new


# ---------------------------------------------------------------------------
# Loss and gradient
# ---------------------------------------------------------------------------


def _add(total: ParamGrad, extra: ParamGrad) -> None:
    for name, g in extra.items():
        total[name] = total[name] + g


def loss_and_grad(
    net: ScoreNet,
    y0: np.ndarray,
    sde: VpSde,
    cfg: TrainConfig,
    rng: np.random.Generator,
    debiased: DebiasedTimeDist | None = None,
) -> tuple[LossValue, ParamGrad]:
    """Minibatch loss rows and the parameter gradient of their mean."""
    n, dim = y0.shape
    model = NetScore(net, sde, cfg.parameterize)
    if cfg.loss_kind == "dsm_debiased":
        dist = debiased if debiased is not None else DebiasedTimeDist(sde, cfg.s_eps)
        s, _ = dist.sample(n, rng)
        row_scale = np.full(n, dist.Z)
    else:
        s, _ = UniformTimes(sde, cfg.s_min).sample(n, rng)
        row_scale = np.ones(n)
    c = model.output_scale(s, n)
    noise = rng.standard_normal(y0.shape)
    y_s, _ = sde.perturb(y0, s, noise)
    out = net.forward(y_s, s)

    if cfg.loss_kind in ("dsm_weighted_uniform", "dsm_debiased"):
        std = np.sqrt(np.asarray(sde.cond_var(s)))
        resid = (std * c)[:, None] * out + noise
        rows = row_scale * 0.5 * np.sum(resid * resid, axis=1)
        cot = (row_scale * std * c)[:, None] * resid / n
        grads, _ = net.vjp(y_s, s, cot)
        return LossValue.from_rows(rows), grads

    g2 = np.asarray(sde.beta(s))
    trace = np.zeros(n)
    grads, _ = net.vjp(y_s, s, (g2 * c * c)[:, None] * out / n)
    weight = g2 * c / (n * cfg.ssm_probes)
    for _ in range(cfg.ssm_probes):
        v = rng.choice(np.array([-1.0, 1.0]), size=(n, dim))
        values, probe_grads = net.probe_trace_grad(y_s, s, v, weight)
        trace += values / cfg.ssm_probes
        _add(grads, probe_grads)
    rows = g2 * (0.5 * c * c * np.sum(out * out, axis=1) + c * trace)
    return LossValue.from_rows(rows), grads


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    iter: int
    wall_clock_s: float
    loss_mean: float
    loss_stderr: float
    eval_elbo_mean: float
    eval_elbo_stderr: float


@dataclass
class TrainResult:
    net: ScoreNet
    metrics: list[MetricsRow] = field(default_factory=list)


def _evaluate(
    net: ScoreNet, sde: VpSde, eval_data: np.ndarray | None, cfg: TrainConfig
) -> tuple[float, float]:
    if eval_data is None or cfg.eval_rows == 0 or eval_data.shape[0] == 0:
        return math.nan, math.nan
    rows = eval_data[: cfg.eval_rows]
    estimate = dataset_elbo(
        NetScore(net, sde, cfg.parameterize),
        sde,
        rows,
        cfg.eval_steps,
        np.random.default_rng((cfg.seed, _EVAL_STREAM)),
        div_mode=cfg.eval_div,
    )
    return estimate.mean, estimate.stderr


def train(
    net: ScoreNet,
    data: np.ndarray,
    sde: VpSde,
    cfg: TrainConfig,
    *,
    eval_data: np.ndarray | None = None,
    config_hash: str = "",
) -> TrainResult:
    """Train *net* on the rows of *data* and return the final net with its metrics.

    A metrics row is recorded before the first update, every ``eval_every``
    updates, and after the last one. Each row carries the current minibatch
    loss and, when *eval_data* is given, the held-out plug-in CT-ELBO
    evaluated with the same paths every time.

    Raises:
        TrainingError: On a non-finite loss, naming the iteration and config hash.
    """
    cfg.validate()
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise DomainError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    debiased = DebiasedTimeDist(sde, cfg.s_eps) if cfg.loss_kind == "dsm_debiased" else None
    state = AdamState.fresh(net.params)
    result = TrainResult(net=net)
    start = time.perf_counter()

    def record(it: int, loss: LossValue) -> None:
        elbo_mean, elbo_stderr = _evaluate(result.net, sde, eval_data, cfg)
        wall = time.perf_counter() - start if cfg.record_wall_clock else math.nan
        row = MetricsRow(it, wall, loss.mean, loss.stderr, elbo_mean, elbo_stderr)
        result.metrics.append(row)
        logger.info(
            "iter %d: loss %.5f +- %.2g, held-out ELBO %.4f +- %.2g",
            it,
            loss.mean,
            loss.stderr,
            elbo_mean,
            elbo_stderr,
        )

    def step_loss(it: int) -> tuple[LossValue, ParamGrad]:
        idx = rng.integers(0, data.shape[0], size=cfg.batch)
        loss, grads = loss_and_grad(result.net, data[idx], sde, cfg, rng, debiased)
        if not math.isfinite(loss.mean):
            raise TrainingError(
                f"non-finite loss at iteration {it} (config {config_hash or 'unhashed'})"
            )
        return loss, grads

    for it in tqdm(range(cfg.iters), desc="train", disable=not cfg.progress):
        loss, grads = step_loss(it)
        if it % cfg.eval_every == 0:
            record(it, loss)
        state, params = adam_step(state, result.net.params, grads, cfg.lr)
        result.net = result.net.with_params(params)
    loss, _ = step_loss(cfg.iters)
    record(cfg.iters, loss)
    return result


def metrics_to_csv(rows: list[MetricsRow], *, record_wall_clock: bool = True) -> str:
    """Serialize metrics; without wall clock the ``wall_clock_s`` column is left empty."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        wall = repr(row.wall_clock_s) if record_wall_clock else ""
        writer.writerow(
            [
                row.iter,
                wall,
                repr(row.loss_mean),
                repr(row.loss_stderr),
                repr(row.eval_elbo_mean),
                repr(row.eval_elbo_stderr),
            ]
        )
    return buf.getvalue()
