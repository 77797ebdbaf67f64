"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class InvalidDataset(ValueError):
    pass


class IngestionError(ValueError):
    """Raised when a feature or checkpoint file cannot be parsed.

    ``row`` is the 1-based data row (header excluded) that failed, or None
    when the failure concerns the header or the file as a whole.
    """

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class NumericalDomainError(ArithmeticError):
    pass


class MetricUndefined(ArithmeticError):
    def __init__(self, message, cls=None):
        self.cls = cls
        super().__init__(message)


class DivergenceError(RuntimeError):
    def __init__(self, message, last_good_epoch):
        self.last_good_epoch = last_good_epoch
        super().__init__(f"{message} (last good epoch: {last_good_epoch})")
