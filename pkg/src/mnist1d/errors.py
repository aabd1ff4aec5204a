"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration violates one of its documented invariants."""


class DimensionError(ValueError):
    """Operands have incompatible shapes; the message names both shapes."""


class UsageError(ValueError):
    """An API was called outside its contract (detached tensors, bad CLI args, ...)."""


class DataError(ValueError):
    """Input data is malformed (labels out of range, empty dataset, ...)."""


class ParseError(ValueError):
    """A serialized file could not be parsed.

    ``offset`` is the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
