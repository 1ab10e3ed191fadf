"""
score_net.py — Time-conditioned MLP score network with hand-written reverse mode.

The network maps ``[y, τ(s)]`` to a d-vector, where τ(s) = [s, sin(2^j π s),
cos(2^j π s) for j < k]. Hidden layers use a C² activation so the divergence
and its parameter gradient exist. Three backward passes are provided:

- :meth:`ScoreNet.vjp` — parameter and input gradients of ``cᵀ s_θ``
- :meth:`ScoreNet.divergence_exact` — d vjp passes with basis cotangents
- :meth:`ScoreNet.probe_trace_grad` — forward-mode tangent along a probe v,
  then reverse mode through both primal and tangent, giving the parameter
  gradient of ``vᵀ J v`` that sliced score matching trains on
"""

from __future__ import annotations

import base64
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from omegaconf import OmegaConf
from overrides import override
from scipy.special import expit

from sdelbo.errors import DomainError, NumericError
from sdelbo.score_model import ScoreModel
from sdelbo.vp_sde import VpSde

logger = logging.getLogger(__name__)

ParamGrad = dict[str, np.ndarray]

ACTIVATIONS = ("swish", "tanh")
PARAMETERIZATIONS = ("score", "drift_a")
CHECKPOINT_FORMAT = "sdelbo-checkpoint/1"


# ---------------------------------------------------------------------------
# Activations: value, first and second derivative
# ---------------------------------------------------------------------------


def _swish(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sig = expit(u)
    value = u * sig
    d1 = sig * (1.0 + u * (1.0 - sig))
    d2 = sig * (1.0 - sig) * (2.0 + u * (1.0 - 2.0 * sig))
    return value, d1, d2


def _tanh(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.tanh(u)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


_ACTIVATION_FNS = {"swish": _swish, "tanh": _tanh}


def time_features(s: np.ndarray | float, n: int, k: int) -> np.ndarray:
    """Time conditioning ``[s, sin(2^j π s), cos(2^j π s)]_{j<k}``, shape ``(n, 1 + 2k)``."""
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (n,))
    cols = [s[:, None]]
    if k > 0:
        freqs = np.pi * 2.0 ** np.arange(k)
        arg = s[:, None] * freqs[None, :]
        cols += [np.sin(arg), np.cos(arg)]
    return np.concatenate(cols, axis=1)


@dataclass
class _Tape:
    """Forward activations kept for the backward pass."""

    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    d1: list[np.ndarray] = field(default_factory=list)
    d2: list[np.ndarray] = field(default_factory=list)
    out: np.ndarray | None = None


class ScoreNet:
    """Multilayer perceptron s_θ(y, s) with float64 parameters.

    Args:
        widths: Layer widths, input first. ``widths[0]`` must equal
            ``d + 1 + 2·time_features`` and ``widths[-1]`` is d.
        params: Mapping ``W1, b1, ..., WL, bL`` with ``Wl`` of shape
            ``(widths[l], widths[l-1])``.
        activation: ``"swish"`` (x·sigmoid(x)) or ``"tanh"``; applied on
            hidden layers only, so ``len(widths) == 2`` is a plain affine map.
        time_features: Number k of Fourier frequency pairs.

    Raises:
        DomainError: On inconsistent widths, parameter shapes, or an unknown
            activation.
    """

    def __init__(
        self,
        widths: list[int],
        params: dict[str, np.ndarray],
        *,
        activation: str = "swish",
        time_features: int = 6,
    ) -> None:
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise DomainError(f"widths must hold >= 2 positive entries, got {widths}")
        if activation not in ACTIVATIONS:
            raise DomainError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        if time_features < 0:
            raise DomainError(f"time_features must be >= 0, got {time_features}")
        dim = widths[-1]
        if widths[0] != dim + 1 + 2 * time_features:
            raise DomainError(
                f"input width {widths[0]} must equal d + 1 + 2k = "
                f"{dim} + 1 + 2*{time_features}"
            )
        for layer in range(1, len(widths)):
            w_shape = (widths[layer], widths[layer - 1])
            if params[f"W{layer}"].shape != w_shape or params[f"b{layer}"].shape != (w_shape[0],):
                raise DomainError(f"layer {layer} parameters do not match widths {widths}")
        self.widths = widths
        self.activation = activation
        self.time_features = time_features
        self.params = {name: np.asarray(value, dtype=np.float64) for name, value in params.items()}
        self._act = _ACTIVATION_FNS[activation]

    @classmethod
    def init(
        cls,
        widths: list[int],
        seed: int,
        *,
        activation: str = "swish",
        time_features: int = 6,
    ) -> ScoreNet:
        """Deterministic initialization: weights N(0, 1/fan_in), zero biases."""
        if any(int(w) <= 0 for w in widths):
            raise DomainError(f"widths must be positive, got {list(widths)}")
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for layer in range(1, len(widths)):
            fan_in = int(widths[layer - 1])
            params[f"W{layer}"] = rng.standard_normal((int(widths[layer]), fan_in)) / math.sqrt(
                fan_in
            )
            params[f"b{layer}"] = np.zeros(int(widths[layer]))
        return cls(list(widths), params, activation=activation, time_features=time_features)

    @property
    def dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def zeros_like_params(self) -> ParamGrad:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def with_params(self, params: dict[str, np.ndarray]) -> ScoreNet:
        return ScoreNet(
            self.widths,
            params,
            activation=self.activation,
            time_features=self.time_features,
        )

    # -- forward ------------------------------------------------------------

    def _inputs(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if y.shape[1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got {y.shape[1]}")
        return np.concatenate([y, time_features(s, y.shape[0], self.time_features)], axis=1)

    def _forward(self, y: np.ndarray, s: np.ndarray | float) -> _Tape:
        tape = _Tape(inputs=self._inputs(y, s))
        h = tape.inputs
        for layer in range(1, self.n_layers):
            u = h @ self.params[f"W{layer}"].T + self.params[f"b{layer}"]
            h, d1, d2 = self._act(u)
            tape.pre.append(u)
            tape.post.append(h)
            tape.d1.append(d1)
            tape.d2.append(d2)
        last = self.n_layers
        tape.out = h @ self.params[f"W{last}"].T + self.params[f"b{last}"]
        if not np.all(np.isfinite(tape.out)):
            raise NumericError("score network produced a non-finite output")
        return tape

    def forward(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        """Evaluate s_θ(y, s) for ``(n, d)`` points; returns ``(n, d)``."""
        return self._forward(y, s).out

    __call__ = forward

    # -- reverse mode -------------------------------------------------------

    def _backward(self, tape: _Tape, cotangent: np.ndarray) -> tuple[ParamGrad, np.ndarray]:
        grads: ParamGrad = {}
        delta = cotangent
        for layer in range(self.n_layers, 0, -1):
            below = tape.post[layer - 2] if layer > 1 else tape.inputs
            grads[f"W{layer}"] = delta.T @ below
            grads[f"b{layer}"] = delta.sum(axis=0)
            delta = delta @ self.params[f"W{layer}"]
            if layer > 1:
                delta = delta * tape.d1[layer - 2]
        return grads, delta[:, : self.dim]

    def vjp(
        self, y: np.ndarray, s: np.ndarray | float, cotangent: np.ndarray
    ) -> tuple[ParamGrad, np.ndarray]:
        """Gradients of ``Σ_rows cotangentᵀ s_θ(y, s)``.

        Returns:
            ``(pgrad, ygrad)``: parameter gradients summed over the batch, and
            per-row input gradients ``J_θ(y, s)ᵀ cotangent`` of shape ``(n, d)``.

        Raises:
            NumericError: If any gradient entry is non-finite.
        """
        tape = self._forward(y, s)
        cotangent = np.asarray(cotangent, dtype=np.float64).reshape(tape.out.shape)
        grads, ygrad = self._backward(tape, cotangent)
        if not all(np.all(np.isfinite(g)) for g in grads.values()) or not np.all(
            np.isfinite(ygrad)
        ):
            raise NumericError("non-finite gradient in score network vjp")
        return grads, ygrad

    def divergence_exact(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        """tr(∂s_θ/∂y) per row from d backward passes with basis cotangents."""
        tape = self._forward(y, s)
        n = tape.out.shape[0]
        div = np.zeros(n)
        for j in range(self.dim):
            basis = np.zeros((n, self.dim))
            basis[:, j] = 1.0
            _, ygrad = self._backward(tape, basis)
            div += ygrad[:, j]
        return div

    def probe_samples(
        self, y: np.ndarray, s: np.ndarray | float, probes: int, rng: np.random.Generator
    ) -> np.ndarray:
        """``vᵀ J v`` for *probes* Rademacher draws per row, shape ``(probes, n)``."""
        if probes < 1:
            raise DomainError(f"probes must be >= 1, got {probes}")
        tape = self._forward(y, s)
        n = tape.out.shape[0]
        samples = np.empty((probes, n))
        for p in range(probes):
            v = rng.choice(np.array([-1.0, 1.0]), size=(n, self.dim))
            _, ygrad = self._backward(tape, v)
            samples[p] = np.sum(v * ygrad, axis=1)
        return samples

    def divergence_hutchinson(
        self, y: np.ndarray, s: np.ndarray | float, probes: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Hutchinson estimate of the divergence with Rademacher probes.

        Returns:
            ``(estimate, stderr)`` per row. With a single probe the sample
            deviation is undefined and stderr is NaN.
        """
        samples = self.probe_samples(y, s, probes, rng)
        estimate = samples.mean(axis=0)
        if probes == 1:
            logger.warning("Hutchinson divergence with a single probe has no stderr; reporting NaN")
            return estimate, np.full(estimate.shape[0], np.nan)
        return estimate, samples.std(axis=0, ddof=1) / math.sqrt(probes)

    def probe_trace_grad(
        self,
        y: np.ndarray,
        s: np.ndarray | float,
        v: np.ndarray,
        weight: np.ndarray,
    ) -> tuple[np.ndarray, ParamGrad]:
        """Probe values ``vᵢᵀ J(yᵢ) vᵢ`` with the θ-gradient of their weighted sum.

        Args:
            y: Points, ``(n, d)``.
            s: Times, ``(n,)`` or scalar.
            v: Probe vectors, ``(n, d)``.
            weight: Per-row weights w, ``(n,)``.
        """
        tape = self._forward(y, s)
        n = tape.out.shape[0]
        v = np.asarray(v, dtype=np.float64)
        tangents = [np.concatenate([v, np.zeros((n, self.widths[0] - self.dim))], axis=1)]
        pre_tangents: list[np.ndarray] = []
        for layer in range(1, self.n_layers):
            ud = tangents[-1] @ self.params[f"W{layer}"].T
            pre_tangents.append(ud)
            tangents.append(tape.d1[layer - 1] * ud)
        last = self.n_layers
        out_tangent = tangents[-1] @ self.params[f"W{last}"].T
        values = np.sum(v * out_tangent, axis=1)

        grads = self.zeros_like_params()
        adj_out_tangent = np.asarray(weight, dtype=np.float64)[:, None] * v
        grads[f"W{last}"] = adj_out_tangent.T @ tangents[-1]
        adj_tangent = adj_out_tangent @ self.params[f"W{last}"]
        adj_primal = np.zeros_like(adj_tangent)
        for layer in range(last - 1, 0, -1):
            d1 = tape.d1[layer - 1]
            adj_pre_tangent = adj_tangent * d1
            adj_pre = adj_tangent * pre_tangents[layer - 1] * tape.d2[layer - 1] + adj_primal * d1
            below = tape.post[layer - 2] if layer > 1 else tape.inputs
            grads[f"W{layer}"] = adj_pre.T @ below + adj_pre_tangent.T @ tangents[layer - 1]
            grads[f"b{layer}"] = adj_pre.sum(axis=0)
            adj_primal = adj_pre @ self.params[f"W{layer}"]
            adj_tangent = adj_pre_tangent @ self.params[f"W{layer}"]
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericError("non-finite gradient in probe trace backward pass")
        return values, grads


# ---------------------------------------------------------------------------
# ScoreModel adapter
# ---------------------------------------------------------------------------


class NetScore(ScoreModel):
    """Exposes a :class:`ScoreNet` as a :class:`ScoreModel`.

    With ``parameterize="drift_a"`` the network outputs the inference drift
    a = g·s_θ and the score is recovered as a / g(s).
    """

    def __init__(self, net: ScoreNet, sde: VpSde, parameterize: str = "drift_a") -> None:
        if parameterize not in PARAMETERIZATIONS:
            raise DomainError(
                f"parameterize must be one of {PARAMETERIZATIONS}, got {parameterize!r}"
            )
        self.net = net
        self.sde = sde
        self.parameterize = parameterize
        self.dim = net.dim

    def output_scale(self, s: np.ndarray | float, n: int) -> np.ndarray:
        """Per-row factor c(s) with score = c(s)·net(y, s)."""
        if self.parameterize == "score":
            return np.ones(n)
        return np.broadcast_to(1.0 / np.asarray(self.sde.diffusion_g(s)), (n,)).copy()

    @override
    def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        out = self.net.forward(y, s)
        return self.output_scale(s, out.shape[0])[:, None] * out

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
        scale = self.output_scale(s, y.shape[0])
        if probes == 0:
            return scale * self.net.divergence_exact(y, s)
        if rng is None:
            raise DomainError("Hutchinson divergence needs an rng")
        return scale * self.net.probe_samples(y, s, probes, rng).mean(axis=0)

    @override
    def dummy_inputs(self) -> list[dict[str, object]]:
        horizon = self.sde.horizon
        grid = np.linspace(-2.0, 2.0, 4 * self.dim).reshape(4, self.dim)
        return [
            {"y": np.zeros((4, self.dim)), "s": 1e-3 * horizon},
            {"y": grid, "s": horizon},
            {"y": grid[:2], "s": np.array([0.1, 0.9]) * horizon},
        ]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained score model."""

    net: ScoreNet
    sde: VpSde
    parameterize: str = "drift_a"
    config_hash: str = ""
    run_config: dict | None = None

    def score_model(self) -> NetScore:
        return NetScore(self.net, self.sde, self.parameterize)


def _encode(arr: np.ndarray) -> dict[str, object]:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(data.shape),
        "dtype": "<f8",
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(tuple(entry["shape"])).copy()


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    """Write *checkpoint* as a self-describing YAML document.

    Arrays are stored as base64 of their little-endian float64 bytes, so
    :func:`load_checkpoint` reproduces them bit for bit.
    """
    net = checkpoint.net
    doc = {
        "format": CHECKPOINT_FORMAT,
        "net": {
            "widths": list(net.widths),
            "activation": net.activation,
            "time_features": net.time_features,
        },
        "parameterize": checkpoint.parameterize,
        "sde": {
            "beta_min": checkpoint.sde.beta_min,
            "beta_max": checkpoint.sde.beta_max,
            "horizon": checkpoint.sde.horizon,
        },
        "config_hash": checkpoint.config_hash,
        "run_config": checkpoint.run_config,
        "params": {name: _encode(value) for name, value in net.params.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    OmegaConf.save(OmegaConf.create(doc), path)
    logger.debug("wrote checkpoint %s", path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        FileNotFoundError: If *path* does not exist.
        DomainError: If the document is not an sdelbo checkpoint.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = OmegaConf.to_container(OmegaConf.load(path), resolve=True)
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"{path} is not an {CHECKPOINT_FORMAT} document")
    params = {name: _decode(entry) for name, entry in doc["params"].items()}
    net = ScoreNet(
        doc["net"]["widths"],
        params,
        activation=doc["net"]["activation"],
        time_features=doc["net"]["time_features"],
    )
    return Checkpoint(
        net=net,
        sde=VpSde(**doc["sde"]),
        parameterize=doc["parameterize"],
        config_hash=doc.get("config_hash", ""),
        run_config=doc.get("run_config"),
    )
