"""Exception hierarchy shared by all nfseg modules."""


class NFSegError(Exception):
    """Base class for every error raised by nfseg."""


class ContractViolation(NFSegError, ValueError):
    """An operation was called with inputs outside its precondition."""


class ConfigurationError(NFSegError, ValueError):
    """A configuration is internally inconsistent or unusable."""


class DivergenceError(NFSegError, FloatingPointError):
    """A non-finite value appeared where finite numbers are required.

    ``where`` names the offending parameter or quantity and ``step`` the
    training step, when known.
    """

    def __init__(self, message, where=None, step=None):
        super().__init__(message)
        self.where = where
        self.step = step


class LoadError(NFSegError, OSError):
    """A file needed by a loader is missing or unreadable."""


class DecodeError(NFSegError, ValueError):
    """A label image contains a color outside the class color table."""

    def __init__(self, message, location=None, color=None):
        super().__init__(message)
        self.location = location
        self.color = color
