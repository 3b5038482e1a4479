"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class EALSTMError(Exception):
    exit_code = 1


class ConfigurationError(EALSTMError):
    """Invalid configuration, shapes or arguments."""

    exit_code = 2


class VariantError(ConfigurationError):
    """Operation requested on the wrong model variant."""


class DataError(EALSTMError):
    """Ingestion or dataset content problems."""

    exit_code = 3


class MetricError(EALSTMError):
    """A metric or signature is undefined for the given series."""

    exit_code = 3


class NumericError(EALSTMError):
    """Non-finite values encountered during computation."""

    exit_code = 4
