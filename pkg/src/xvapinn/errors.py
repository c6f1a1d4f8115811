"""Exception hierarchy shared across the package."""


class XvaPinnError(Exception):
    """Base class for all package errors."""


class ContractError(XvaPinnError):
    """A caller violated an interface contract (shape/dimension/kind mismatch)."""


class ConfigError(XvaPinnError):
    """Invalid configuration. Carries the offending field path when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SchemaError(XvaPinnError):
    """A persisted document (checkpoint, surface, config) fails schema checks."""


class NumericError(XvaPinnError):
    """A non-finite value appeared during evaluation or training.

    ``region`` and ``index`` locate the offending collocation point when the
    failure happened inside a loss assembly; ``step`` locates it in training.
    """

    def __init__(self, message, region=None, index=None, step=None):
        self.region = region
        self.index = index
        self.step = step
        where = []
        if region is not None:
            where.append(f"region={region}")
        if index is not None:
            where.append(f"index={index}")
        if step is not None:
            where.append(f"step={step}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
