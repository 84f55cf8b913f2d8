"""Exception types shared across the package."""


class ScfrError(Exception):
    """Base class for all scfrlab errors."""


class ConfigurationError(ScfrError):
    """A model, counter, or scenario parameter is out of its valid range."""


class TraceParseError(ScfrError):
    """A frame-trace file could not be parsed.

    ``line`` counts data lines after the ``fps=`` header, starting at 1.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (data line {line})")
        self.line = line


class FrameOverloadError(ScfrError):
    """A frame's burst does not fit inside one frame period."""

    def __init__(self, frame_index: int, needed: int, capacity: int):
        super().__init__(
            f"frame {frame_index} needs {needed} packets but only {capacity} "
            f"fit in one frame period at the configured transmit rate"
        )
        self.frame_index = frame_index


class SequencingError(ScfrError):
    """An input stream violated a strict ordering requirement."""
