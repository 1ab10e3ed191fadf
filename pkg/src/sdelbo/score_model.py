"""
score_model.py — The ScoreModel abstract base class.

A ScoreModel is the unit every estimator in sdelbo consumes: a time-conditioned
vector field s(y, s) approximating ∇log q(y, s), together with its divergence
and a dummy_inputs method that makes it auditable.
"""

from __future__ import annotations

import abc

import numpy as np
from overrides import EnforceOverrides

from sdelbo.errors import AuditError


class ScoreModel(abc.ABC, EnforceOverrides):
    """Abstract base class for score models.

    A ScoreModel is:

    - **Batched** — ``score`` maps ``(n, d)`` points and ``(n,)`` times to an
      ``(n, d)`` field; a scalar time broadcasts over the batch
    - **Differentiable in space** — ``divergence`` returns ∇·s either exactly
      (``probes=0``) or by Hutchinson estimation with Rademacher probes
    - **Auditable** — ``dummy_inputs()`` provides example inputs that
      :func:`audit` runs before any Monte-Carlo budget is spent

    ``exact`` is ``True`` only for closed-form oracle scores. Estimators that
    need the true marginal score ∇log q (the λ > 0 members of the plug-in
    family, ESM) check it and raise :class:`~sdelbo.errors.CapabilityError`
    otherwise.

    Examples:
        Define a ScoreModel::

            from overrides import override

            class StandardNormalScore(ScoreModel):
                dim = 2

                @override
                def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
                    return -np.asarray(y, dtype=np.float64)

                @override
                def divergence(self, y, s, *, rng=None, probes: int = 0) -> np.ndarray:
                    return np.full(np.atleast_2d(y).shape[0], -2.0)

                @override
                def dummy_inputs(self) -> list[dict[str, object]]:
                    return [{"y": np.zeros((3, 2)), "s": 0.5}]
    """

    dim: int
    exact: bool = False

    @abc.abstractmethod
    def score(self, y: np.ndarray, s: np.ndarray | float) -> np.ndarray:
        """Evaluate the score field.

        Args:
            y: Points, shape ``(n, d)``.
            s: Times, shape ``(n,)`` or a scalar broadcast over the batch.

        Returns:
            Array of shape ``(n, d)``.
        """
        ...

    @abc.abstractmethod
    def divergence(
        self,
        y: np.ndarray,
        s: np.ndarray | float,
        *,
        rng: np.random.Generator | None = None,
        probes: int = 0,
    ) -> np.ndarray:
        """Return ∇·s(y, s) per row, shape ``(n,)``.

        ``probes=0`` requests the exact trace; ``probes >= 1`` requests the
        Hutchinson estimate averaged over that many Rademacher probes drawn
        from *rng*.
        """
        ...

    @abc.abstractmethod
    def dummy_inputs(self) -> list[dict[str, object]]:
        """Return example ``{"y": ..., "s": ...}`` dicts for :func:`audit`.

        Cover the corners the estimators hit: both ends of the time horizon
        and more than one batch size.
        """
        ...


def audit(model: ScoreModel) -> None:
    """Run *model* on each of its dummy inputs and check shapes and finiteness.

    Raises:
        AuditError: On the first input set whose score or exact divergence has
            the wrong shape or a non-finite entry. The message carries the
            index of the failing input set.

    Examples:
        >>> audit(OracleScore(GaussianOracle.standard(2)))
    """
    inputs = model.dummy_inputs()
    if not inputs:
        raise AuditError(f"{type(model).__name__}.dummy_inputs() returned no inputs")
    for index, kwargs in enumerate(inputs):
        y = np.atleast_2d(np.asarray(kwargs["y"], dtype=np.float64))
        try:
            field = model.score(y, kwargs["s"])
            div = model.divergence(y, kwargs["s"])
        except Exception as exc:
            raise AuditError(
                f"{type(model).__name__} failed on dummy input #{index}: {exc}"
            ) from exc
        if field.shape != y.shape or div.shape != (y.shape[0],):
            raise AuditError(
                f"{type(model).__name__} dummy input #{index}: expected score "
                f"shape {y.shape} and divergence shape {(y.shape[0],)}, got "
                f"{field.shape} and {div.shape}"
            )
        if not (np.all(np.isfinite(field)) and np.all(np.isfinite(div))):
            raise AuditError(
                f"{type(model).__name__} dummy input #{index} produced non-finite values"
            )
