"""Exception types shared across the package."""


class RSFormerError(Exception):
    """Base class for all errors raised by this package."""

    kind = "error"


class ConfigError(RSFormerError, ValueError):
    """An invalid configuration value (architecture, loss, training)."""

    kind = "config_error"


class ContractError(RSFormerError, ValueError):
    """An input violates an operation's shape or value contract."""

    kind = "contract_error"


class NonFiniteError(ContractError):
    """A tensor contains NaN or Inf where finite values are required."""

    kind = "non_finite"


class ManifestError(RSFormerError):
    """A dataset manifest refers to missing or malformed files."""

    kind = "manifest_error"

    def __init__(self, message, offenders=()):
        self.offenders = list(offenders)
        if self.offenders:
            listed = ", ".join(str(o) for o in self.offenders[:10])
            more = len(self.offenders) - 10
            if more > 0:
                listed += f" (+{more} more)"
            message = f"{message}: {listed}"
        super().__init__(message)


class CheckpointError(RSFormerError):
    """A checkpoint archive is malformed or does not match its config."""

    kind = "checkpoint_error"


class TrainingError(RSFormerError):
    """Training could not continue (e.g. the loss became non-finite)."""

    kind = "training_error"
