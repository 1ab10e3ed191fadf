"""
errors.py — Exception hierarchy for sdelbo.

One class per failure family. Messages name the offending argument and what
would have been accepted, so a failed run says which knob to turn.
"""

from __future__ import annotations


class SdeElboError(Exception):
    """Root of every library error raised by sdelbo."""


class DomainError(SdeElboError, ValueError):
    """An argument lies outside its mathematical domain.

    Examples:
        Time outside the horizon::

            raise DomainError("time s=1.5 is outside [0, T=1.0]")
    """


class DegenerateKernelError(DomainError):
    """The perturbation kernel has zero variance (s = 0), so its score is undefined."""


class CapabilityError(SdeElboError):
    """The requested estimator needs information the inputs cannot provide.

    Raised, for instance, when a λ > 0 estimator is asked to run without a
    closed-form marginal score, or a variational gap is requested for a
    generative SDE whose marginals are not known in closed form.
    """


class NumericError(SdeElboError, ArithmeticError):
    """A non-finite value appeared in a network pass or a solver step."""


class NovikovError(NumericError):
    """The running ELBO integrand crossed the overflow guard.

    The guard is the runtime surrogate for Novikov's condition: an inference
    drift whose accumulated ½‖a‖² blows up does not define a valid change of
    measure.
    """


class EstimatorError(SdeElboError):
    """A Monte-Carlo estimator rejected too many paths to report a value."""


class TrainingError(SdeElboError):
    """Training produced a non-finite loss."""


class AuditError(SdeElboError):
    """A score model failed its dummy-input audit."""


__all__ = [
    "AuditError",
    "CapabilityError",
    "DegenerateKernelError",
    "DomainError",
    "EstimatorError",
    "NovikovError",
    "NumericError",
    "SdeElboError",
    "TrainingError",
]
