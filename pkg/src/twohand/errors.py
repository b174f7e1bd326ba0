"""Exception types shared across the package."""


class TwoHandError(Exception):
    """Base class for all package errors."""


class DegenerateInput(TwoHandError, ValueError):
    pass


class OutOfBounds(TwoHandError, IndexError):
    pass


class ShapeMismatch(TwoHandError, ValueError):
    def __init__(self, a, b, what="shapes"):
        super().__init__(f"{what} incompatible: {tuple(a)} vs {tuple(b)}")
        self.shapes = (tuple(a), tuple(b))


class InvalidConfig(TwoHandError, ValueError):
    pass


class ConfigError(TwoHandError, ValueError):
    pass


class SpaceMismatch(TwoHandError, ValueError):
    pass


class RetryExhausted(TwoHandError, RuntimeError):
    pass


class BehindCamera(TwoHandError, ValueError):
    def __init__(self, indices):
        self.indices = [int(i) for i in indices]
        super().__init__(f"points at or behind the camera plane: indices {self.indices}")


class ParseError(TwoHandError, ValueError):
    def __init__(self, line, field, message):
        self.line = line
        self.field = field
        super().__init__(f"line {line}: field '{field}': {message}")


class TrainingDiverged(TwoHandError, RuntimeError):
    pass
