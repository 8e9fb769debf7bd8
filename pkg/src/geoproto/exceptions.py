"""Custom exceptions for geoproto."""


class GeoprotoError(Exception):
    """Base exception for all geoproto errors."""


class InputError(GeoprotoError):
    """User-fixable problem with configuration or input data."""


class ConfigurationError(InputError):
    """Run configuration or command-line option error."""


class SchemaError(InputError):
    """Invalid attribute schema."""


class SchemaMismatchError(InputError, ValueError):
    """Two records or prototypes do not share one schema layout."""


class InvalidCoordinateError(InputError):
    """Latitude/longitude out of range or not a number."""


class NormalizationError(InputError, ValueError):
    """A value cannot be mapped onto the fitted [0, 1] scale."""


class IngestError(InputError):
    """Error reading a CSV into a dataset."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ComputationError(GeoprotoError):
    """A computation could not produce a defined result."""


class EmptyClusterError(ComputationError):
    """A prototype update was requested for a cluster without members."""

    def __init__(self, cluster: int):
        self.cluster = cluster
        super().__init__(f"Cluster {cluster} has no members")


class DegenerateWeightError(ComputationError):
    """A balance weight cannot be estimated from the data."""

    def __init__(self, weight: str, reason: str):
        self.weight = weight
        super().__init__(f"Cannot estimate {weight}: {reason}; set {weight} manually")


class UndefinedRatioError(ComputationError):
    """Aggregate expected amount is zero so the A/E ratio is undefined."""

    def __init__(self, cluster: int | str | None):
        self.cluster = cluster
        label = "portfolio" if cluster is None else f"cluster {cluster}"
        super().__init__(f"A/E ratio undefined for {label}: expected amount is zero")


class GapSelectionError(ComputationError):
    """Gap statistic could not be evaluated."""
