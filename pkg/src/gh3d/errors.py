"""Exception hierarchy. The CLI maps each category to an exit code."""


class GH3DError(Exception):
    exit_code = 1


class ConfigurationError(GH3DError, ValueError):
    exit_code = 3


class ShapeError(GH3DError, ValueError):
    exit_code = 3


class DataError(GH3DError, ValueError):
    exit_code = 3


class UsageError(GH3DError, ValueError):
    exit_code = 2


class NumericError(GH3DError, FloatingPointError):
    exit_code = 4

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


class RenderError(GH3DError, RuntimeError):
    exit_code = 4
