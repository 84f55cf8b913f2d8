"""Packet departure schedules stamped with source-clock timestamps.

Streams are video-like: a trace of frame sizes at a fixed frame rate is cut
into payload-sized packets, which either spread evenly across each frame
period or burst at a fixed transmit rate at the start of each frame (on-off
traffic).  Departure instants are exact rationals so that timestamping via
the counter advance semantics stays drift-free over arbitrarily long runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .clocks import ClockModel, ticks_at
from .errors import ConfigurationError, FrameOverloadError, TraceParseError

Rational = Union[int, float, Fraction]


@dataclass(frozen=True)
class FrameTrace:
    """Frame sizes in bytes at a fixed true-time frame rate."""

    frame_sizes: tuple[int, ...]
    fps: float

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigurationError(f"fps must be positive, got {self.fps}")
        if any(s < 0 for s in self.frame_sizes):
            raise ConfigurationError("frame sizes must be non-negative")

    def __len__(self) -> int:
        return len(self.frame_sizes)


@dataclass(frozen=True)
class DepartureSchedule:
    """Monotone departure instants (exact rational seconds) with packet sizes."""

    times: tuple[Fraction, ...]
    sizes_bytes: tuple[int, ...]

    def __post_init__(self):
        if len(self.times) != len(self.sizes_bytes):
            raise ConfigurationError("departure times and sizes must have equal length")
        if any(b > a for a, b in zip(self.times[1:], self.times)):
            raise ConfigurationError("departure times must be non-decreasing")

    def __len__(self) -> int:
        return len(self.times)

    def times_seconds(self) -> np.ndarray:
        """Departure instants as floats, for plotting and statistics."""
        return np.array([float(t) for t in self.times])

    def truncated(self, n_packets: int) -> "DepartureSchedule":
        return DepartureSchedule(self.times[:n_packets], self.sizes_bytes[:n_packets])


@dataclass(frozen=True)
class StampedSchedule:
    """A departure schedule with source timestamps attached."""

    times: tuple[Fraction, ...]
    ts_ticks: tuple[int, ...]
    sizes_bytes: tuple[int, ...]
    source_clock: ClockModel | None = None

    def __len__(self) -> int:
        return len(self.times)


def _packet_sizes(frame_bytes: int, payload_bytes: int) -> list[int]:
    n_full, rest = divmod(frame_bytes, payload_bytes)
    return [payload_bytes] * n_full + ([rest] if rest else [])


def generate_spread_stream(trace: FrameTrace, payload_bytes: int) -> DepartureSchedule:
    """Split each frame into packets spread evenly over its frame period.

    A frame of size S at index n becomes m = ceil(S / payload_bytes) packets
    departing at n*T + j*T/m for j = 0..m-1, T = 1/fps; the first packet of
    every frame sits exactly on the frame boundary.
    """
    if payload_bytes <= 0:
        raise ConfigurationError(f"payload_bytes must be positive, got {payload_bytes}")
    period = 1 / Fraction(trace.fps)
    times: list[Fraction] = []
    sizes: list[int] = []
    for n, frame_bytes in enumerate(trace.frame_sizes):
        if frame_bytes == 0:
            continue
        pkt_sizes = _packet_sizes(frame_bytes, payload_bytes)
        m = len(pkt_sizes)
        frame_start = n * period
        times.extend(frame_start + Fraction(j, m) * period for j in range(m))
        sizes.extend(pkt_sizes)
    return DepartureSchedule(tuple(times), tuple(sizes))


def generate_onoff_stream(trace: FrameTrace, payload_bytes: int,
                          tx_rate_hz: Rational) -> DepartureSchedule:
    """Burst each frame's packets at a fixed rate from the frame start.

    Packets of frame n depart at n*T, n*T + 1/tx_rate, n*T + 2/tx_rate, ...;
    the link is idle until the next frame boundary.

    Raises:
        FrameOverloadError: if a frame needs more than T * tx_rate packets.
    """
    if payload_bytes <= 0:
        raise ConfigurationError(f"payload_bytes must be positive, got {payload_bytes}")
    rate = Fraction(tx_rate_hz)
    if rate <= 0:
        raise ConfigurationError(f"tx_rate_hz must be positive, got {tx_rate_hz}")
    period = 1 / Fraction(trace.fps)
    capacity = math.floor(period * rate)
    gap = 1 / rate
    times: list[Fraction] = []
    sizes: list[int] = []
    for n, frame_bytes in enumerate(trace.frame_sizes):
        if frame_bytes == 0:
            continue
        pkt_sizes = _packet_sizes(frame_bytes, payload_bytes)
        m = len(pkt_sizes)
        if m > capacity:
            raise FrameOverloadError(n, needed=m, capacity=capacity)
        frame_start = n * period
        times.extend(frame_start + j * gap for j in range(m))
        sizes.extend(pkt_sizes)
    return DepartureSchedule(tuple(times), tuple(sizes))


def generate_periodic_stream(interval: Rational, n: int,
                             payload_bytes: int = 1460) -> DepartureSchedule:
    """Departures at 0, c, 2c, ..., (n-1)c for a constant interval c."""
    c = Fraction(interval)
    if c <= 0:
        raise ConfigurationError(f"interval must be positive, got {interval}")
    return DepartureSchedule(tuple(k * c for k in range(n)), (payload_bytes,) * n)


def synthesize_vbr_trace(seed, n_frames: int, mean_bytes: float,
                         dispersion: float, fps: float = 30.0) -> FrameTrace:
    """Reproducible pseudo-random frame sizes with a lognormal distribution.

    ``mean_bytes`` is the distribution mean; ``dispersion`` is the log-space
    sigma, so the trace is heavy-tailed like coded video. The same seed always
    yields the same trace.
    """
    if mean_bytes <= 0:
        raise ConfigurationError(f"mean_bytes must be positive, got {mean_bytes}")
    if dispersion <= 0:
        raise ConfigurationError(f"dispersion must be positive, got {dispersion}")
    rng = np.random.default_rng(seed)
    mu = math.log(mean_bytes) - dispersion**2 / 2
    sizes = rng.lognormal(mean=mu, sigma=dispersion, size=n_frames)
    return FrameTrace(tuple(int(round(s)) for s in sizes), fps)


def load_frame_trace(path: Union[str, Path]) -> FrameTrace:
    """Load a frame trace file.

    Format: first line ``fps=<real>``, then one decimal integer (frame bytes)
    per line. ``#`` starts a comment; blank lines are ignored. Parse errors
    report the offending data line, counting from 1 after the header.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header_idx = None
    for i, raw in enumerate(lines):
        text = raw.split("#", 1)[0].strip()
        if text:
            header_idx = i
            break
    if header_idx is None:
        raise TraceParseError("missing 'fps=<real>' header", line=0)
    header = lines[header_idx].split("#", 1)[0].strip()
    if not header.startswith("fps="):
        raise TraceParseError(f"expected 'fps=<real>' header, got {header!r}", line=0)
    try:
        fps = float(header[len("fps="):])
    except ValueError:
        raise TraceParseError(f"bad fps value in header {header!r}", line=0) from None

    sizes: list[int] = []
    data_line = 0
    for raw in lines[header_idx + 1:]:
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        data_line += 1
        try:
            sizes.append(int(text))
        except ValueError:
            raise TraceParseError(f"expected a frame size in bytes, got {text!r}",
                                  line=data_line) from None
        if sizes[-1] < 0:
            raise TraceParseError(f"frame size must be non-negative, got {sizes[-1]}",
                                  line=data_line)
    return FrameTrace(tuple(sizes), fps)


def stamp_departures(schedule: DepartureSchedule, source_clock: ClockModel,
                     initial_counter: int = 0) -> StampedSchedule:
    """Sample the source counter at each departure instant.

    The counter advances with residue carry between departures; by advance
    additivity the timestamp of packet k is the counter value after one exact
    advance from time zero to departure k, which is how it is computed.
    """
    initial = initial_counter % source_clock.modulus
    ticks = tuple(ticks_at(source_clock, t.numerator, t.denominator, initial)
                  for t in schedule.times)
    return StampedSchedule(schedule.times, ticks, schedule.sizes_bytes,
                           source_clock)


def mean_interdeparture_s(schedule: Sequence[Fraction] | DepartureSchedule) -> float:
    """Mean gap between consecutive departures, in seconds."""
    times = schedule.times if isinstance(schedule, DepartureSchedule) else tuple(schedule)
    if len(times) < 2:
        return math.nan
    return float((times[-1] - times[0]) / (len(times) - 1))
