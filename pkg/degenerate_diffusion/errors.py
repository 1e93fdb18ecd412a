"""
Error Types for Degenerate Diffusion Experiments
================================================

Every failure raised by the library derives from ``DiffusionError`` so callers
(and the CLI) can turn it into a machine-readable error document.
"""

from typing import Any, Dict, Optional


class DiffusionError(Exception):
    """Base class for all library errors"""

    kind = "error"

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.kind, "message": str(self)}


class InvalidArgumentError(DiffusionError, ValueError):
    """Raised when an operation receives an argument outside its domain"""

    kind = "invalid-argument"


class ModelError(DiffusionError):
    """Raised when model coefficients violate their declared contract"""

    kind = "model-error"


class SimulationError(DiffusionError):
    """Raised when a simulated quantity overflows or becomes non-finite"""

    kind = "simulation-error"

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["step"] = self.step
        return payload


class NumericalError(DiffusionError):
    """Raised when a linear solve is singular or hopelessly ill-conditioned"""

    kind = "numerical-error"


class ConfigError(DiffusionError):
    """Raised for malformed experiment configuration"""

    kind = "config-error"

    def __init__(self, message: str, location: Optional[str] = None):
        super().__init__(message)
        self.location = location

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["location"] = self.location
        return payload


class VerificationFailure(DiffusionError):
    """Raised when a verification report does not pass its statistical gate"""

    kind = "verification-failure"

    def __init__(self, message: str, report: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.report = report or {}

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["failed"] = [
            stat["label"] for stat in self.report.get("statistics", []) if not stat.get("passed")
        ]
        return payload
