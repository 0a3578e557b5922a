"""Exception hierarchy shared by every stage of the pipeline."""


class FsbsedError(Exception):
    """Base class for package errors."""


class EmptyInputError(FsbsedError, ValueError):
    pass


class ShapeError(FsbsedError, ValueError):
    pass


class ConfigurationError(FsbsedError, ValueError):
    """Batch or config cannot satisfy a loss/sampler precondition."""


class ProtocolError(FsbsedError, ValueError):
    """Few-shot episode protocol violated (too few shots, no negatives...)."""


class NumericError(FsbsedError, ArithmeticError):
    pass


class CheckpointError(FsbsedError):
    pass


class ManifestError(FsbsedError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)
