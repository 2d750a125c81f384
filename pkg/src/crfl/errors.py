"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent run configuration / inputs."""


class DataFormatError(ValueError):
    """Malformed dataset file (bad magic number, truncated payload, ...)."""


class DataConsistencyError(ValueError):
    """Dataset files disagree with each other (e.g. image/label counts)."""


class DivergenceError(RuntimeError):
    """Training produced non-finite model parameters."""
