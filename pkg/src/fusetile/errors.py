"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class SchemaError(EngineError):
    """Manifest document is malformed (missing/extra fields, bad types or enums)."""


class ShapeError(EngineError):
    """Tensor shapes or layer kinds are inconsistent."""


class BlobError(EngineError):
    """Weight blob offsets/lengths violate the manifest contract."""


class ConfigError(EngineError):
    """Invalid engine configuration value."""


class PlanInfeasible(EngineError):
    """No tile plan fits the L1 budget, or a runtime allocation would exceed it."""

    def __init__(self, message, target=None):
        super().__init__(message)
        self.target = target
