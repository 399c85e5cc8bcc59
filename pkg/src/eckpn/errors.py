"""Exception types shared across the package."""


class EckpnError(Exception):
    """Base class for package errors."""


class EngineError(EckpnError):
    """Invalid computation-graph usage (bad root, log of non-positive, ...)."""


class ShapeError(EngineError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class ConfigError(EckpnError):
    """Rejected configuration (CLI exit code 2)."""


class DataFormatError(EckpnError):
    """Malformed dataset or checkpoint container (CLI exit code 2)."""


class NumericError(EckpnError):
    """Non-finite values or a failed run (CLI exit code 3)."""
