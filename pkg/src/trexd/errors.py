"""Exception hierarchy shared by every trexd subsystem."""


class TrexError(Exception):
    """Base class for all trexd errors."""


class DimensionError(TrexError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TrexError, ValueError):
    """A documented precondition was violated."""


class NonFiniteError(TrexError, FloatingPointError):
    """A NaN or infinity appeared in a tensor."""


class UnsupportedOperation(TrexError):
    """The requested operation is not available on this object (e.g. gradients
    through a non-differentiable renderer)."""


class CorruptFileError(TrexError):
    """A checkpoint or data file failed structural or checksum validation."""


class VersionMismatchError(TrexError):
    """A file was written by an incompatible format version."""


class ConfigError(TrexError, ValueError):
    """A run or training configuration is invalid."""


class SamplingFailure(TrexError):
    """A chain did not concentrate near its target.

    ``report`` carries the :class:`~trexd.samplers.FailureReport` and
    ``records`` the samples that were drawn anyway.
    """

    def __init__(self, report, records=None):
        super().__init__(report.reason)
        self.report = report
        self.records = records
