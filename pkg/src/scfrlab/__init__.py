"""scfrlab: asynchronous source-clock frequency recovery laboratory.

A streaming estimator library (cumulative-ratio, recursive least squares over
a through-origin regression, instantaneous-ratio, and a PLL baseline) plus a
simulation harness that generates aperiodic packet streams, pushes them
through configurable delay channels, and measures how well each estimator
recovers the source clock frequency.
"""

from .clocks import ClockModel, PacketObservation, TickCounter, advance, snapshot_timestamp, tick_delta
from .errors import (
    ConfigurationError,
    FrameOverloadError,
    ScfrError,
    SequencingError,
    TraceParseError,
)

__version__ = "0.1.0"

__all__ = [
    "ClockModel",
    "TickCounter",
    "PacketObservation",
    "tick_delta",
    "advance",
    "snapshot_timestamp",
    "ScfrError",
    "ConfigurationError",
    "TraceParseError",
    "FrameOverloadError",
    "SequencingError",
    "__version__",
]
