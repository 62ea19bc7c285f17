"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor operation received incompatibly shaped operands."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent option combination."""


class DataError(ValueError):
    """Dataset ingestion or validation failure."""


class NumericError(RuntimeError):
    """Non-finite values or a failed numerical check during training."""
