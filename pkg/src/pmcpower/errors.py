class PmcPowerError(ValueError):
    """Base class for input/data errors raised by the toolchain."""


class TraceFormatError(PmcPowerError):
    pass


class DegenerateError(PmcPowerError):
    pass


class NnlsConvergenceError(PmcPowerError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SelectionError(PmcPowerError):
    pass


class ModelError(PmcPowerError):
    pass


class FxOverflowError(PmcPowerError, OverflowError):
    pass


class MonitorError(PmcPowerError):
    pass
