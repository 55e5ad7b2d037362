"""Exception types raised across the package."""


class ErgodicSAError(Exception):
    """Base class for all errors raised by :mod:`ergodic_sa`."""


class InvalidKernel(ErgodicSAError, ValueError):
    """Matrix is not row-stochastic."""


class NotClosed(ErgodicSAError):
    """A state set leaks probability mass outside itself."""


class NotIrreducible(ErgodicSAError):
    """A state set splits into several communicating classes."""


class ClassTooLarge(ErgodicSAError):
    """Dense eigen-analysis requested on a class larger than supported."""


class WeightMismatch(ErgodicSAError, ValueError):
    """Mixture weights do not match the number of ergodic classes."""


class NonFiniteInput(ErgodicSAError, ValueError):
    pass


class UnresolvableLabel(ErgodicSAError):
    """Label law is inconsistent with what the summary map can produce."""


class StateOutOfRange(ErgodicSAError, IndexError):
    pass


class NonFiniteDrift(ErgodicSAError, FloatingPointError):
    pass


class OutOfDomain(ErgodicSAError, ValueError):
    pass


class ClassStructureChanged(ErgodicSAError):
    """Ergodic decomposition of the x-dependent kernel moved with x."""


class SchemaError(ErgodicSAError):
    """Config document failed validation.

    ``errors`` holds ``(path, reason)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {reason}" for path, reason in self.errors)
        super().__init__(lines)


class UnknownFamily(SchemaError):
    pass


class InvalidSchedule(SchemaError):
    pass


class UnknownPreset(ErgodicSAError, KeyError):
    pass
