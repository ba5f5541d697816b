"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a function."""


class UnattainablePriceError(ValueError):
    """A price violates the no-arbitrage bounds, so no implied volatility exists."""


class ModelInvalidError(ValueError):
    """Term-structure parameters break an admissibility condition."""


class NumericAbort(RuntimeError):
    """A non-finite value appeared during evaluation or training."""

    def __init__(self, message, *, epoch=None, batch=None, layer=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.layer = layer
