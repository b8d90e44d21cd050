class GfmError(Exception):
    """Base class for all package errors."""


class ConfigError(GfmError):
    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class NumericalError(GfmError):
    """Failures that map to CLI exit code 3."""


class DegenerateLoop(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class ImproperTransferFunction(GfmError):
    pass


class SingularCoupling(NumericalError):
    pass


class NonPhysicalFrequency(NumericalError):
    pass


class NotAnEquilibrium(GfmError):
    pass


class WrongMode(GfmError):
    pass


class InvalidDesign(ConfigError):
    pass


class NotSettled(NumericalError):
    pass


class NumericalBlowup(NumericalError):
    pass


class UnstableEquilibrium(NumericalError):
    pass
