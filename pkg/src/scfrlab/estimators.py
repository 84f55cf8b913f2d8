"""Streaming clock-frequency-ratio estimators.

All four estimators consume the same per-arrival samples: interarrival ticks
on the receiver counter, interdeparture ticks carried by the timestamps, and
their running sums since the first packet.  Tick sums are kept as Python
integers (exact at any magnitude) and only the final divisions leave integer
arithmetic, so a 48-bit counter running for hours costs no precision.

The cumulative-ratio and least-squares estimators are the interesting ones:
they stay unbiased on aperiodic streams where the per-packet instantaneous
ratio picks up a bias whenever delay correlates with interdeparture time, and
they outrun a PLL whose phase detector has to chew through the same jitter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .clocks import PacketObservation, tick_delta
from .errors import SequencingError

MIN_DCO_RATIO = 50.0


@dataclass(frozen=True)
class RtoSample:
    """One arrival's view of the through-origin regression model.

    ``tilde_ts``/``tilde_tr`` are unwrapped source/receiver ticks since the
    first packet (the running sums of ``idt``/``iat``); the regression says
    tilde_tr = R * tilde_ts + noise.
    """

    tilde_ts: int
    tilde_tr: int
    iat: int
    idt: int


def to_rto_samples(observations: Iterable[PacketObservation],
                   source_width: int, receiver_width: int) -> Iterator[RtoSample]:
    """Difference a wrapped observation stream into regression samples.

    The first observation is the k = 0 reference and emits nothing; each
    later arrival yields its tick deltas (wrap-corrected by the half-range
    rule) and the running sums. Duplicate timestamps (idt = 0) pass through;
    consumers decide what a zero regressor step means for them.
    """
    it = iter(observations)
    try:
        prev = next(it)
    except StopIteration:
        return
    tilde_ts = 0
    tilde_tr = 0
    for obs in it:
        idt = tick_delta(prev.ts_ticks, obs.ts_ticks, source_width)
        iat = tick_delta(prev.arrival_ticks, obs.arrival_ticks, receiver_width)
        tilde_ts += idt
        tilde_tr += iat
        yield RtoSample(tilde_ts=tilde_ts, tilde_tr=tilde_tr, iat=iat, idt=idt)
        prev = obs


class CumulativeRatio:
    """Ratio of cumulative interarrival to cumulative interdeparture ticks.

    State is two integers; the estimate at packet k is their exact quotient.
    No parameters, no initial values.
    """

    def __init__(self):
        self.a = 0  # cumulative receiver ticks
        self.d = 0  # cumulative source ticks

    def update(self, sample: RtoSample) -> Optional[float]:
        self.a += sample.iat
        self.d += sample.idt
        return self.estimate

    @property
    def estimate(self) -> Optional[float]:
        if self.d == 0:
            return None
        return self.a / self.d

    def estimate_exact(self) -> Optional[tuple[int, int]]:
        """The estimate as an exact (numerator, denominator) pair."""
        return None if self.d == 0 else (self.a, self.d)


class RlsThroughOrigin:
    """Recursive least squares for a one-parameter regression through zero.

    Update order matters and is fixed: the gain denominator uses the previous
    covariance, and the estimate update uses the already-updated covariance,

        P(k) = P(k-1) - P(k-1)^2 ts^2 / (1 + P(k-1) ts^2)
        R(k) = R(k-1) + P(k) ts (tr - ts R(k-1))

    with ts = tilde_ts(k), tr = tilde_tr(k).  P stays positive and
    non-increasing; a zero regressor leaves the state untouched.
    """

    def __init__(self, r0: float, p0: float):
        if p0 <= 0:
            raise ValueError(f"initial gain P(0) must be positive, got {p0}")
        self.r_hat = float(r0)
        self.p = float(p0)

    def update(self, sample: RtoSample) -> Optional[float]:
        ts = sample.tilde_ts
        if ts == 0:
            return self.r_hat
        tr = sample.tilde_tr
        ts2 = float(ts) * float(ts)
        # P - P^2 ts^2 / (1 + P ts^2) == P / (1 + P ts^2); the quotient form
        # avoids cancellation when P ts^2 is large.
        self.p = self.p / (1.0 + self.p * ts2)
        self.r_hat = self.r_hat + self.p * ts * (tr - ts * self.r_hat)
        return self.r_hat

    @property
    def estimate(self) -> float:
        return self.r_hat


def rls_batch_oracle(samples: Sequence[RtoSample], r0: float, p0: float) -> float:
    """Closed-form solution the recursive estimator must agree with.

    Minimizes sum_k (tr_k - R ts_k)^2 + (R - r0)^2 / p0; with no samples the
    prior r0 is returned, and p0 -> infinity recovers plain least squares
    through the origin.
    """
    if p0 <= 0:
        raise ValueError(f"p0 must be positive, got {p0}")
    num = math.fsum(float(s.tilde_ts) * float(s.tilde_tr) for s in samples) + r0 / p0
    den = math.fsum(float(s.tilde_ts) ** 2 for s in samples) + 1.0 / p0
    return num / den


def ir_ratio(sample: RtoSample) -> Optional[float]:
    """Per-packet instantaneous ratio iat/idt; None when idt is zero.

    Memoryless, and biased on aperiodic streams whenever the delay process
    correlates with the interdeparture times.
    """
    if sample.idt == 0:
        return None
    return sample.iat / sample.idt


class ClockRatioPll:
    """Per-packet software PLL tracking the source frequency from timestamps.

    The phase detector compares unwrapped timestamp ticks against the
    integrated VCO phase (both in source cycles); a PI filter with gains
    ``kp``/``ki`` steers the VCO off its free-running frequency.  The
    ``unit_gain_hz_per_cycle`` factor converts cycles of phase error into Hz
    of correction; it is the loop's overall gain knob.
    """

    def __init__(self, free_run_hz: float, kp: float, ki: float,
                 unit_gain_hz_per_cycle: float = 1.0,
                 source_width_bits: int = 32,
                 min_vco_hz: float = 1e-6):
        if free_run_hz <= 0:
            raise ValueError(f"free-running frequency must be positive, got {free_run_hz}")
        self.free_run_hz = float(free_run_hz)
        self.kp = float(kp)
        self.ki = float(ki)
        self.unit_gain = float(unit_gain_hz_per_cycle)
        self.source_width_bits = source_width_bits
        self.min_vco_hz = min_vco_hz
        self.vco_hz = self.free_run_hz
        self.vco_phase = 0.0        # accumulated VCO cycles
        self.integrator = 0.0       # accumulated phase error
        self.clamped = 0
        self._prev_arrival: Optional[float] = None
        self._prev_ts: Optional[int] = None
        self._ts_accum = 0

    def update(self, arrival_time_s: float, ts_ticks: int) -> Optional[float]:
        """Feed one arrival; returns the recovered source frequency in Hz.

        The first arrival only establishes the phase reference and returns
        None. Arrival times must be strictly increasing.
        """
        if self._prev_arrival is None:
            self._prev_arrival = arrival_time_s
            self._prev_ts = ts_ticks
            return None
        dt = arrival_time_s - self._prev_arrival
        if dt <= 0:
            raise SequencingError(
                f"arrival times must be strictly increasing "
                f"({arrival_time_s} after {self._prev_arrival})"
            )
        self._ts_accum += tick_delta(self._prev_ts, ts_ticks, self.source_width_bits)
        self._prev_arrival = arrival_time_s
        self._prev_ts = ts_ticks

        self.vco_phase += self.vco_hz * dt
        error = self._ts_accum - self.vco_phase
        self.integrator += error
        vco = self.free_run_hz + (self.kp * error + self.ki * self.integrator) * self.unit_gain
        if vco < self.min_vco_hz:
            vco = self.min_vco_hz
            self.clamped += 1
        self.vco_hz = vco
        return self.vco_hz

    @property
    def estimate_hz(self) -> float:
        return self.vco_hz


def unit_gain_for_damping(kp: float, ki: float, damping: float,
                          update_interval_s: float) -> float:
    """Loop gain giving a target damping factor at a given packet rate.

    Linearizing the per-packet PI loop around lock gives a second-order
    system with natural frequency sqrt(ki*g/T) and damping kp*g /
    (2*sqrt(ki*g/T)) for unit gain g and update interval T; solving for g
    turns published (kp, ki, damping) triples into a usable loop.
    """
    if min(kp, ki, damping, update_interval_s) <= 0:
        raise ValueError("kp, ki, damping, and update interval must all be positive")
    return 4.0 * damping**2 * ki / (kp**2 * update_interval_s)


@dataclass
class DcoOutput:
    """Synthesized source-clock ticks driven by a ratio estimate."""

    recovered_ticks: int = 0
    residue: float = 0.0


def dco_synthesize(ratio_updates: Iterable[tuple[float, int]],
                   output: Optional[DcoOutput] = None) -> DcoOutput:
    """Derive a recovered source clock from ratio estimates.

    Each (r_hat, receiver_ticks) pair converts a receiver tick budget into
    receiver_ticks / r_hat recovered source ticks, carrying the fractional
    remainder forward.  A ratio below 50 means the receiver clock is too slow
    relative to the synthesized one for clean quantization; that configuration
    warns but still runs.
    """
    out = output if output is not None else DcoOutput()
    warned = False
    for r_hat, receiver_ticks in ratio_updates:
        if r_hat <= 0:
            raise ValueError(f"ratio estimate must be positive, got {r_hat}")
        if receiver_ticks < 0:
            raise ValueError("receiver tick budget must be non-negative")
        if r_hat < MIN_DCO_RATIO and not warned:
            warnings.warn(
                f"receiver/source ratio {r_hat:.3g} is below {MIN_DCO_RATIO:.0f}; "
                "synthesized clock quantization will be coarse",
                stacklevel=2,
            )
            warned = True
        total = out.residue + receiver_ticks / r_hat
        whole = math.floor(total)
        out.recovered_ticks += whole
        out.residue = total - whole
    return out
