class DataError(Exception):
    """Bad input data; the CLI maps these to exit code 2."""


class ParseError(DataError):
    pass


class LoadError(DataError):
    pass


class DimensionError(DataError):
    pass


class FeatureKeyError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericalError(Exception):
    """Non-finite loss or gradient during training (exit code 3)."""
