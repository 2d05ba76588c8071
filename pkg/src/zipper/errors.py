"""Exception types shared across the toolchain."""


class ZipperError(Exception):
    """Base class for all toolchain errors."""


class ParseError(ZipperError):
    """Malformed input text (graph file, model text, IR dump)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CapacityError(ZipperError):
    """A resource does not fit in the configured hardware.

    `tile_id` is None for non-tile capacity failures (e.g. vertex id overflow).
    """

    def __init__(self, message, tile_id=None, required=None, available=None):
        super().__init__(message)
        self.tile_id = tile_id
        self.required = required
        self.available = available


class ModelError(ZipperError):
    """Invalid model graph: bad structure, domain typing, unknown op."""


class LoweringError(ZipperError):
    """Model could not be lowered to segment IR."""


class CodegenError(ZipperError):
    """Instruction emission failed (malformed channel graph, range overflow)."""


class ProtocolError(ZipperError):
    """Stream synchronization protocol violated (semaphore underflow etc)."""


class DeadlockError(ZipperError):
    """All unfinished streams blocked; carries a snapshot of stream states."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or []
