"""Free-running oscillators and wrapping hardware counters.

Everything here uses exact arithmetic: counter advances accumulate a rational
sub-tick residue instead of repeatedly rounding floats, so advancing a counter
over any partition of an interval lands on exactly the same state as one
advance over the whole interval.  Parts-per-million offsets are applied as
exact rationals too, which is what makes a 90 kHz clock with +200 ppm come out
at exactly 90018 Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Union

from .errors import ConfigurationError

MIN_COUNTER_BITS = 8
MAX_COUNTER_BITS = 64

Seconds = Union[int, float, Fraction]


def _check_width(width_bits: int) -> int:
    if not MIN_COUNTER_BITS <= width_bits <= MAX_COUNTER_BITS:
        raise ConfigurationError(
            f"counter width must be in [{MIN_COUNTER_BITS}, {MAX_COUNTER_BITS}] bits, "
            f"got {width_bits}"
        )
    return 1 << width_bits


@lru_cache(maxsize=64)
def _effective_rate(nominal_hz: float, offset_ppm: float) -> Fraction:
    return Fraction(nominal_hz) * (1 + Fraction(offset_ppm) / 1_000_000)


@dataclass(frozen=True)
class ClockModel:
    """An oscillator with a nominal frequency and a signed ppm deviation.

    Attributes:
        nominal_hz: Nominal frequency in Hz.
        offset_ppm: Signed deviation in parts per million.
        counter_width_bits: Width of the counter this clock drives, in [8, 64].
    """

    nominal_hz: float
    offset_ppm: float = 0.0
    counter_width_bits: int = 32

    def __post_init__(self):
        _check_width(self.counter_width_bits)
        if self.rate() <= 0:
            raise ConfigurationError(
                f"effective frequency must be positive, got nominal {self.nominal_hz} Hz "
                f"at {self.offset_ppm} ppm"
            )

    def rate(self) -> Fraction:
        """Effective frequency as an exact rational, in Hz."""
        return _effective_rate(self.nominal_hz, self.offset_ppm)

    @property
    def effective_hz(self) -> float:
        """Effective frequency nominal*(1 + ppm*1e-6), as a float."""
        return float(self.rate())

    @property
    def modulus(self) -> int:
        return 1 << self.counter_width_bits

    def new_counter(self, initial_value: int = 0) -> "TickCounter":
        return TickCounter(value=initial_value % self.modulus,
                           width_bits=self.counter_width_bits)


@dataclass(frozen=True)
class TickCounter:
    """A wrapping tick counter with an exact sub-tick phase residue.

    ``value`` is always in [0, 2**width_bits).  ``fractional_residue`` carries
    the fractional ticks left over by the previous advance, so repeated small
    advances never drift relative to one big advance.
    """

    value: int
    width_bits: int
    fractional_residue: Fraction = Fraction(0)

    def __post_init__(self):
        modulus = _check_width(self.width_bits)
        if not 0 <= self.value < modulus:
            raise ConfigurationError(
                f"counter value {self.value} out of range for {self.width_bits} bits"
            )
        if not 0 <= self.fractional_residue < 1:
            raise ConfigurationError(
                f"fractional residue must lie in [0, 1), got {self.fractional_residue}"
            )

    @property
    def modulus(self) -> int:
        return 1 << self.width_bits


@dataclass
class PacketObservation:
    """One packet as seen at the receiver.

    ``ts_ticks`` is the source timestamp (source counter at departure) and
    ``arrival_ticks`` the receiver counter at arrival; both wrap at their
    counter widths.  ``arrival_time_s`` keeps the arrival instant as a plain
    real number for consumers configured to bypass counter quantization
    (the PLL baseline).
    """

    seq: int
    ts_ticks: int
    arrival_ticks: int
    arrival_time_s: float = field(default=0.0, compare=False)


def tick_delta(prev: int, curr: int, width_bits: int) -> int:
    """Elapsed ticks from ``prev`` to ``curr`` on a wrapping counter.

    Resolves the wrap by the half-range rule: the true elapsed count is
    assumed to be below 2**(width_bits - 1) ticks.

    Raises:
        ConfigurationError: if ``width_bits`` is outside [8, 64].
        ValueError: if either counter value is out of range for the width.
    """
    modulus = _check_width(width_bits)
    if not (0 <= prev < modulus and 0 <= curr < modulus):
        raise ValueError(
            f"counter values ({prev}, {curr}) out of range for {width_bits} bits"
        )
    return (curr - prev) % modulus


def advance(counter: TickCounter, clock: ClockModel, dt: Seconds) -> TickCounter:
    """Advance ``counter`` by ``dt`` seconds of ``clock`` time.

    The counter gains floor(effective_hz * dt + residue) ticks, wrapping at
    its width; the fractional part is carried into the returned counter.
    Advancing over sub-intervals of [0, T] in any order accumulates exactly
    the same ticks as one advance over T.

    Raises:
        ValueError: if ``dt`` is negative.
    """
    if dt < 0:
        raise ValueError(f"cannot advance a counter by negative time {dt}")
    total = clock.rate() * Fraction(dt) + counter.fractional_residue
    whole = math.floor(total)
    return TickCounter(
        value=(counter.value + whole) % counter.modulus,
        width_bits=counter.width_bits,
        fractional_residue=total - whole,
    )


def snapshot_timestamp(clock: ClockModel, counter: TickCounter) -> int:
    """Read the current counter value as a timestamp. Pure read."""
    if counter.width_bits != clock.counter_width_bits:
        raise ConfigurationError(
            f"counter width {counter.width_bits} does not match clock width "
            f"{clock.counter_width_bits}"
        )
    return counter.value


def ticks_at(clock: ClockModel, t_num: int, t_den: int, initial_value: int = 0) -> int:
    """Counter value after one exact advance from time zero to t_num/t_den.

    Equivalent to chaining ``advance`` over any partition of [0, t] from a
    zero-residue counter at ``initial_value`` (additivity makes the chain
    collapse to one floor).  Works on raw integer pairs so hot paths can skip
    Fraction normalization.
    """
    whole = (clock.rate().numerator * t_num) // (clock.rate().denominator * t_den)
    return (initial_value + whole) % clock.modulus
