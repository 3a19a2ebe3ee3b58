"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested kernel."""


class ConfigError(ValueError):
    """A configuration value violates its constraints."""


class GraphError(RuntimeError):
    """Misuse of the compute graph (non-scalar backward, replayed graph)."""


class EmptyMaskError(ValueError):
    """No valid pixel is left to compute a loss over."""


class DomainError(ValueError):
    """A value lies outside the domain of the function (e.g. log of <= 0)."""


class ProtocolError(ValueError):
    """The evaluation protocol cannot be applied to the given maps."""


class TrainingError(RuntimeError):
    """Training cannot proceed (non-finite gradients and the like)."""


class DataError(ValueError):
    """Input files or samples are missing, empty or inconsistent."""


class ParseError(ValueError):
    """A binary file could not be parsed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
