"""Exception taxonomy shared across the package.

The HTTP layer maps these onto wire-level error codes; everything else
raises them directly.
"""


class BanditError(Exception):
    """Base class for all banditserve errors."""


class InvalidObservation(BanditError):
    """A value fed to a streaming estimator is out of domain (e.g. non-finite)."""


class MalformedState(BanditError):
    """A serialized summary-state document cannot be decoded."""


class SingularModel(BanditError):
    """The linear model's normal equations are numerically singular."""


class SchemaViolation(BanditError):
    """A context/action/reward document does not satisfy the policy's schema."""

    def __init__(self, part: str, message: str):
        super().__init__(message)
        self.part = part  # "context" | "action" | "reward"


class ConfigInvalid(BanditError):
    """A policy configuration failed validation."""


class CycleDetected(ConfigInvalid):
    """The nested-experiment reference graph would contain a cycle."""


class UnknownExperiment(BanditError):
    """No experiment registered under this id."""


class ExperimentNested(BanditError):
    """The experiment cannot be deleted while another one delegates to it."""


class AuthFailure(BanditError):
    """Experiment key mismatch."""


class AdminAuthFailure(BanditError):
    """Admin token missing or mismatched."""


class StoreCorrupt(BanditError):
    """A snapshot or write-ahead log file cannot be read back."""
