"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or parameter shape does not match what a layer expects."""


class InvalidValueError(ValueError):
    """Argument outside its mathematical domain (non-finite, non-positive...)."""


class FormatError(ValueError):
    """Malformed on-disk file (model container, IDX, CIFAR binary, JSON)."""


class UnsupportedLayerError(FormatError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
