"""Error hierarchy.

Every error carries a stable ``code``, a human message and structured
``details``; ``to_dict`` produces the ``{code, message, details}`` document
the CLI prints as its single-line error.
"""

from typing import Any, Dict, Optional


class ShadowPriceError(Exception):
    """Base class for all errors raised by shadowprice."""

    code = "SHADOWPRICE_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Return the standardized error document."""
        document: Dict[str, Any] = {"code": self.code, "message": self.message}
        if self.details:
            document["details"] = self.details
        return document


class DomainError(ShadowPriceError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""

    code = "DOMAIN"


class PreconditionError(ShadowPriceError, ValueError):
    """A documented precondition of an operation is violated."""

    code = "PRECONDITION"


class SingularityError(ShadowPriceError, ValueError):
    """The singular Fernholz drift was evaluated at or beyond its pole."""

    code = "SINGULARITY"


class SimulationDivergedError(ShadowPriceError):
    """A simulated state became NaN or infinite."""

    code = "SIMULATION_DIVERGED"

    def __init__(self, step: int, message: Optional[str] = None):
        super().__init__(
            message or f"simulation diverged at step {step}",
            {"step": int(step)},
        )
        self.step = int(step)


class StepSizeError(ShadowPriceError):
    """A per-step value factor became nonpositive; the grid is too coarse."""

    code = "STEP_SIZE"


class AcceptanceTooRareError(ShadowPriceError):
    """Rejection sampling ran out of attempts."""

    code = "ACCEPTANCE_TOO_RARE"

    def __init__(self, attempts: int, accepted: int, upper_bound: float):
        super().__init__(
            f"no accepted path after {attempts} attempts "
            f"(acceptance rate below {upper_bound:.3g} at 95%)",
            {"attempts": attempts, "accepted": accepted, "rate_upper_95": upper_bound},
        )
        self.attempts = attempts
        self.upper_bound = upper_bound


class ModelContractError(ShadowPriceError):
    """A model violates its volatility-bound contract."""

    code = "MODEL_CONTRACT"


class ConstructionError(ShadowPriceError):
    """An inequality that holds by construction failed: an implementation fault."""

    code = "CONSTRUCTION"


class NoTiltExistsError(ShadowPriceError):
    """Zero is not in the interior of the convex hull of node increments."""

    code = "NO_TILT_EXISTS"


class NumericalTiltError(ShadowPriceError):
    """A tilted tree fails its martingale consistency check."""

    code = "NUMERICAL_TILT"


class CertificateFailedError(ShadowPriceError):
    """A shadow price violates the ratio bounds or leaves the region."""

    code = "CERTIFICATE_FAILED"

    def __init__(self, node_id: Any, message: str, details: Optional[Dict[str, Any]] = None):
        payload = {"node_id": node_id}
        payload.update(details or {})
        super().__init__(message, payload)
        self.node_id = node_id


class TimeChangeError(ShadowPriceError):
    """The quadratic variation clock is not strictly increasing."""

    code = "TIME_CHANGE"


class ConfigValidationError(ShadowPriceError):
    """An experiment configuration failed validation."""

    code = "CONFIG_VALIDATION"

    def __init__(self, violations: list):
        super().__init__(
            "; ".join(violations) if violations else "invalid configuration",
            {"violations": list(violations)},
        )
        self.violations = list(violations)
