"""Exception types shared across the package."""


class ZkflError(Exception):
    """Base class for all package errors."""


class DimensionError(ZkflError, ValueError):
    pass


class DegenerateVectorError(ZkflError, ValueError):
    pass


class InsufficientSamplesError(ZkflError, ValueError):
    pass


class InsufficientClientsError(ZkflError, ValueError):
    pass


class PartitionError(ZkflError, ValueError):
    pass


class FormatError(ZkflError, ValueError):
    """Malformed IDX file."""


class EmptyAggregationError(ZkflError, ValueError):
    pass


class AllRemovedSignal(ZkflError):
    """Raised when cross-client detection would discard every update.

    The engine catches this and keeps the previous global model.
    """

    def __init__(self, report):
        super().__init__(f"all updates removed in round {report.round}")
        self.report = report


class UndefinedMetricError(ZkflError, ValueError):
    pass


class RangeError(ZkflError, OverflowError):
    """Value does not fit the fixed-point / field range."""


class ProverInconsistencyError(ZkflError):
    """Fixed-point recomputation disagrees with the claimed detection report."""


class ConfigError(ZkflError, ValueError):
    pass
