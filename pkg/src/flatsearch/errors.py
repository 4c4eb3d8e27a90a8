"""Exception types shared across the package."""


class FlatSearchError(Exception):
    pass


class InvalidGene(FlatSearchError, ValueError):
    pass


class ShapeError(FlatSearchError, ValueError):
    pass


class DivergenceError(FlatSearchError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class EmptyArchive(FlatSearchError, ValueError):
    pass


class InsufficientData(FlatSearchError, ValueError):
    pass


class NaNCorrelation(FlatSearchError, ValueError):
    """Kendall's tau is undefined because one input is entirely tied."""


class UnsupportedCorruption(FlatSearchError, KeyError):
    pass
