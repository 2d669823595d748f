"""Exception types raised across the package."""


class CbagError(Exception):
    """Base class for all package errors."""


class SizeError(CbagError, ValueError):
    pass


class FormatError(CbagError, ValueError):
    """A raw dataset file could not be parsed."""


class CorruptBundleError(CbagError):
    """A canonical bundle directory is missing files or fails its integrity checks."""


class NumericalError(CbagError, FloatingPointError):
    pass


class NoTargetNodesError(CbagError, ValueError):
    """The training set holds no node with the requested target label."""


class InfeasibleRateError(CbagError, ValueError):
    """The poisoning rate asks for more relabelings than there are candidates."""


class StalePlanError(CbagError, ValueError):
    """A poison plan no longer matches the label vector it is applied to."""


class ConfigError(CbagError, ValueError):
    pass
