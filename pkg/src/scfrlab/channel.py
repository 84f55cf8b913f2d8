"""Delay channels: map departure schedules to receiver-side observations.

A channel applies a constant path offset plus a per-packet delay process,
then stamps each arrival with the receiver counter.  The realized delay
sequence is kept as ground truth so analyses can separate estimator error
from channel noise.  All randomness flows from a single seed; a given
(model, seed) pair reproduces the same delay sequence bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .clocks import ClockModel, PacketObservation
from .errors import ConfigurationError
from .traffic import StampedSchedule

_DRAW_CHUNK = 8192


@dataclass
class DelayState:
    """Mutable per-run state owned by one transmit call."""

    rng: np.random.Generator
    clipped: int = 0
    prev_departure: Optional[float] = None
    prev_delay: float = 0.0
    # fifo queue bookkeeping
    workload_s: float = 0.0
    t_last: float = 0.0
    next_cross_s: float = math.inf
    # buffered draws (consumed in order; refilled in fixed-size chunks so the
    # sequence is independent of chunking)
    _buf: np.ndarray = field(default_factory=lambda: np.empty(0))
    _buf_pos: int = 0

    def draw(self, fill) -> float:
        if self._buf_pos >= len(self._buf):
            self._buf = fill(self.rng, _DRAW_CHUNK)
            self._buf_pos = 0
        v = self._buf[self._buf_pos]
        self._buf_pos += 1
        return float(v)


class DelayModel:
    """Base delay process. Subclasses define d(k) for packet k."""

    offset_a_s: float = 0.0

    def start(self, seed) -> DelayState:
        return DelayState(rng=np.random.default_rng(seed))

    def sample(self, state: DelayState, k: int, departure_s: float,
               size_bytes: int) -> float:
        raise NotImplementedError


@dataclass
class ConstantDelay(DelayModel):
    """Fixed delay for every packet."""

    delay_s: float = 0.0
    offset_a_s: float = 0.0

    def __post_init__(self):
        if self.delay_s < 0:
            raise ConfigurationError(f"delay must be non-negative, got {self.delay_s}")

    def sample(self, state, k, departure_s, size_bytes):
        return self.delay_s


@dataclass
class GammaDelay(DelayModel):
    """Independent gamma-distributed delays (mean = shape * scale)."""

    shape: float = 2.0
    scale_s: float = 0.5e-3
    offset_a_s: float = 0.0

    def __post_init__(self):
        if self.shape <= 0 or self.scale_s <= 0:
            raise ConfigurationError(
                f"gamma shape and scale must be positive, got {self.shape}, {self.scale_s}"
            )

    def sample(self, state, k, departure_s, size_bytes):
        return state.draw(lambda rng, n: rng.gamma(self.shape, self.scale_s, n))


@dataclass
class Ar1Delay(DelayModel):
    """First-order autoregressive Gaussian delays, clipped at zero.

    d(k) = mean + rho * (d(k-1) - mean) + eps_k, eps ~ N(0, sigma^2); negative
    results clip to 0 and are counted in the run's ground truth.
    """

    mean_s: float = 1e-3
    rho: float = 0.9
    sigma_s: float = 0.1e-3
    offset_a_s: float = 0.0

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise ConfigurationError(f"AR coefficient must satisfy |rho| < 1, got {self.rho}")
        if self.sigma_s < 0 or self.mean_s < 0:
            raise ConfigurationError("AR mean and sigma must be non-negative")

    def start(self, seed):
        state = super().start(seed)
        state.prev_delay = self.mean_s
        return state

    def sample(self, state, k, departure_s, size_bytes):
        eps = state.draw(lambda rng, n: rng.normal(0.0, 1.0, n)) * self.sigma_s
        d = self.mean_s + self.rho * (state.prev_delay - self.mean_s) + eps
        if d < 0:
            d = 0.0
            state.clipped += 1
        state.prev_delay = d
        return d


@dataclass
class FifoQueueDelay(DelayModel):
    """Single FIFO server shared with Poisson cross traffic.

    The stream's packets and fixed-size cross packets queue for one server
    draining at ``service_bytes_per_s``; a packet's delay is the workload in
    front of it plus its own transmission time.  ``cross_load`` is the
    fraction of the service rate consumed by cross traffic.
    """

    service_bytes_per_s: float = 12.5e6
    cross_load: float = 0.5
    cross_packet_bytes: int = 1460
    offset_a_s: float = 0.0

    def __post_init__(self):
        if self.service_bytes_per_s <= 0:
            raise ConfigurationError("service rate must be positive")
        if not 0 <= self.cross_load < 1:
            raise ConfigurationError(f"cross load must be in [0, 1), got {self.cross_load}")
        if self.cross_packet_bytes <= 0:
            raise ConfigurationError("cross packet size must be positive")

    def _cross_rate_hz(self) -> float:
        return self.cross_load * self.service_bytes_per_s / self.cross_packet_bytes

    def start(self, seed):
        state = super().start(seed)
        rate = self._cross_rate_hz()
        if rate > 0:
            state.next_cross_s = state.draw(lambda rng, n: rng.exponential(1 / rate, n))
        return state

    def sample(self, state, k, departure_s, size_bytes):
        rate = self._cross_rate_hz()
        cross_service = self.cross_packet_bytes / self.service_bytes_per_s
        while state.next_cross_s <= departure_s:
            t = state.next_cross_s
            state.workload_s = max(0.0, state.workload_s - (t - state.t_last)) + cross_service
            state.t_last = t
            state.next_cross_s = t + state.draw(
                lambda rng, n: rng.exponential(1 / rate, n))
        state.workload_s = max(0.0, state.workload_s - (departure_s - state.t_last))
        state.t_last = departure_s
        own_service = size_bytes / self.service_bytes_per_s
        delay = state.workload_s + own_service
        state.workload_s += own_service
        return delay


@dataclass
class LoadCorrelatedDelay(DelayModel):
    """Delay whose mean rises with the instantaneous packet rate.

    d(k) = base + rate_gain / gap(k) + gamma noise, where gap(k) is the time
    since the previous departure.  The coupling between delay and
    interdeparture time is what biases per-packet ratio estimates; cumulative
    estimators are insensitive to it.
    """

    base_s: float = 0.0
    rate_gain_s2: float = 1.0e-6
    gamma_shape: float = 16.0
    gamma_scale_s: float = 0.05e-3
    offset_a_s: float = 0.0

    def __post_init__(self):
        if self.base_s < 0 or self.rate_gain_s2 < 0:
            raise ConfigurationError("base delay and correlation gain must be non-negative")
        if self.gamma_shape <= 0 or self.gamma_scale_s < 0:
            raise ConfigurationError("gamma noise parameters must be positive")

    def sample(self, state, k, departure_s, size_bytes):
        d = self.base_s
        if self.gamma_scale_s > 0:
            d += state.draw(lambda rng, n: rng.gamma(self.gamma_shape, self.gamma_scale_s, n))
        if state.prev_departure is not None:
            gap = max(departure_s - state.prev_departure, 1e-9)
            d += self.rate_gain_s2 / gap
        state.prev_departure = departure_s
        return d


def sample_delay(model: DelayModel, k: int, departure_s: float,
                 state: DelayState, size_bytes: int = 1460) -> tuple[float, DelayState]:
    """Draw packet k's delay. The state is advanced in place and returned."""
    return model.sample(state, k, departure_s, size_bytes), state


@dataclass
class ScenarioGroundTruth:
    """What the simulator knows and a real receiver never could."""

    ratio_r: float
    ratio_exact: Fraction
    offset_a_s: float
    delays_s: np.ndarray
    source_hz: float
    receiver_hz: float
    clipped: int = 0

    @property
    def alpha_s(self) -> float:
        """Constant part of the arrival model: offset plus minimum delay."""
        return self.offset_a_s + float(self.delays_s.min())

    @property
    def noise_e_s(self) -> np.ndarray:
        """Non-negative delay noise above the run's minimum delay."""
        return self.delays_s - self.delays_s.min()


def transmit(stamped: StampedSchedule, model: DelayModel,
             receiver_clock: ClockModel, seed,
             receiver_initial_counter: int = 0,
             ) -> tuple[list[PacketObservation], ScenarioGroundTruth]:
    """Deliver a stamped schedule through a delay channel.

    Arrival instants are departure + offset + d(k); observations come out in
    arrival order (late packets may overtake, and are delivered as such), each
    stamped with the receiver counter via exact advance from time zero.
    """
    n = len(stamped)
    if n == 0:
        raise ValueError("cannot transmit an empty schedule")
    if stamped.source_clock is None:
        raise ConfigurationError("schedule carries no source clock; stamp it first")

    state = model.start(seed)
    dep_f = [float(t) for t in stamped.times]
    delays = np.empty(n)
    for k in range(n):
        delays[k] = model.sample(state, k, dep_f[k], stamped.sizes_bytes[k])

    offset_num, offset_den = float(model.offset_a_s).as_integer_ratio()
    arrivals_f = [dep_f[k] + model.offset_a_s + delays[k] for k in range(n)]

    order = list(range(n))
    if any(arrivals_f[i] > arrivals_f[i + 1] for i in range(n - 1)):
        order.sort(key=lambda i: (arrivals_f[i], i))

    rate = receiver_clock.rate()
    rate_num, rate_den = rate.numerator, rate.denominator
    modulus = receiver_clock.modulus
    initial = receiver_initial_counter % modulus
    observations: list[PacketObservation] = []
    for i in order:
        # exact arrival instant dep + a + d as one unreduced rational; the
        # counter value is the same as chaining advances through every
        # earlier arrival (additivity), at a fraction of the cost
        t = stamped.times[i]
        d_num, d_den = float(delays[i]).as_integer_ratio()
        arr_num = (t.numerator * offset_den * d_den
                   + offset_num * t.denominator * d_den
                   + d_num * t.denominator * offset_den)
        arr_den = t.denominator * offset_den * d_den
        whole = (rate_num * arr_num) // (rate_den * arr_den)
        observations.append(PacketObservation(
            seq=i,
            ts_ticks=stamped.ts_ticks[i],
            arrival_ticks=(initial + whole) % modulus,
            arrival_time_s=arrivals_f[i],
        ))

    src_rate = stamped.source_clock.rate()
    rcv_rate = receiver_clock.rate()
    truth = ScenarioGroundTruth(
        ratio_r=float(rcv_rate / src_rate),
        ratio_exact=rcv_rate / src_rate,
        offset_a_s=model.offset_a_s,
        delays_s=delays[order],
        source_hz=float(src_rate),
        receiver_hz=float(rcv_rate),
        clipped=state.clipped,
    )
    return observations, truth


def survival_mask(n: int, loss_rate: float, seed) -> np.ndarray:
    """Boolean keep-mask for i.i.d. packet loss."""
    if not 0 <= loss_rate < 1:
        raise ConfigurationError(f"loss rate must be in [0, 1), got {loss_rate}")
    if loss_rate == 0:
        return np.ones(n, dtype=bool)
    return np.random.default_rng(seed).random(n) >= loss_rate


def drop_packets(observations: list[PacketObservation], loss_rate: float,
                 seed) -> list[PacketObservation]:
    """Remove each observation independently with probability ``loss_rate``."""
    mask = survival_mask(len(observations), loss_rate, seed)
    return [o for o, keep in zip(observations, mask) if keep]
