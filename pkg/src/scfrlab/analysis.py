"""Evaluation of estimator runs: ppm errors, noise spectra, convergence.

Two noise views matter here.  The cumulative estimators see the delay
deviation since the first packet (a slowly wandering series), while the
per-packet ratio sees delay increments divided by interdeparture time (a
rough, differenced series).  Their spectra respond very differently to how
traffic is shaped, which is the whole point of comparing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import get_window, welch

from .channel import ScenarioGroundTruth
from .clocks import PacketObservation, tick_delta
from .estimators import RtoSample


def freq_error_ppm(f_hat: float, f_true: float) -> float:
    """Frequency estimation error in parts per million."""
    if f_true <= 0:
        raise ValueError(f"true frequency must be positive, got {f_true}")
    return (f_hat - f_true) / f_true * 1e6


def noise_series(truth: ScenarioGroundTruth,
                 observations: Sequence[PacketObservation],
                 source_width_bits: int = 32,
                 ) -> tuple[np.ndarray, np.ndarray, int]:
    """Ground-truth noise series behind the two estimator families.

    Returns (delay deviation d(k) - d(0) in seconds, delay increment per
    interdeparture second, skipped count).  Samples with a zero
    interdeparture are skipped from the second series and counted.
    """
    d = np.asarray(truth.delays_s, dtype=float)
    if len(d) != len(observations):
        raise ValueError("ground truth and observations must align")
    d_tilde = d - d[0]

    ratios = []
    skipped = 0
    for k in range(1, len(observations)):
        idt = tick_delta(observations[k - 1].ts_ticks, observations[k].ts_ticks,
                         source_width_bits)
        if idt == 0:
            skipped += 1
            continue
        ratios.append((d[k] - d[k - 1]) / (idt / truth.source_hz))
    return d_tilde, np.array(ratios), skipped


def rto_noise_ticks(truth: ScenarioGroundTruth,
                    samples: Sequence[RtoSample]) -> np.ndarray:
    """Realized regression noise in receiver ticks, per arrival k >= 1.

    This is tilde_tr(k) - R * tilde_ts(k): the exact noise term the
    cumulative estimate divides by tilde_ts, including delay variation and
    both counters' quantization.  The cumulative estimator's error at k is
    exactly this value over tilde_ts(k).
    """
    r = truth.ratio_exact
    return np.array([float(s.tilde_tr - r * s.tilde_ts) for s in samples])


@dataclass
class PsdReport:
    """One-sided power spectral density with its method parameters.

    ``density`` integrates (sum times bin width) to the series' mean square;
    the raw Welch integral is rescaled to make that identity exact, and the
    applied factor is kept in ``calibration``.
    """

    frequencies: np.ndarray
    density: np.ndarray
    sample_rate: float
    segment_len: int
    overlap_fraction: float
    window: str
    axis_unit: str = "cycles/sample"
    calibration: float = 1.0

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.segment_len

    def total_power(self) -> float:
        return float(np.sum(self.density) * self.bin_width)

    def band_mean(self, lo_hz: float, hi_hz: float,
                  exclude_dc: bool = True) -> float:
        """Mean density over [lo, hi); DC excluded by default."""
        sel = (self.frequencies >= lo_hz) & (self.frequencies < hi_hz)
        if exclude_dc:
            sel &= self.frequencies > 0
        if not sel.any():
            raise ValueError("empty frequency band")
        return float(self.density[sel].mean())


def welch_psd(series: Sequence[float], sample_rate: float = 1.0,
              segment_len: int = 4096, overlap_fraction: float = 0.5,
              window: str = "hann", axis_unit: Optional[str] = None) -> PsdReport:
    """Averaged windowed periodogram of a uniformly sampled series.

    The series is analyzed as given (no detrending): a constant series puts
    all its power in the DC bin.  Densities are calibrated so the spectrum
    integrates exactly to the series' mean square, which for a zero-mean
    series is its variance.
    """
    x = np.asarray(series, dtype=float)
    if segment_len > len(x):
        raise ValueError(
            f"series of length {len(x)} is shorter than one segment ({segment_len})"
        )
    if not 0 <= overlap_fraction < 1:
        raise ValueError(f"overlap fraction must be in [0, 1), got {overlap_fraction}")
    get_window(window, 8)  # validate the window name early
    freqs, density = welch(
        x,
        fs=sample_rate,
        window=window,
        nperseg=segment_len,
        noverlap=int(segment_len * overlap_fraction),
        detrend=False,
        return_onesided=True,
        scaling="density",
    )
    mean_square = float(np.mean(x * x))
    raw_total = float(np.sum(density) * (sample_rate / segment_len))
    calibration = mean_square / raw_total if raw_total > 0 else 1.0
    return PsdReport(
        frequencies=freqs,
        density=density * calibration,
        sample_rate=sample_rate,
        segment_len=segment_len,
        overlap_fraction=overlap_fraction,
        window=window,
        axis_unit=axis_unit or ("cycles/sample" if sample_rate == 1.0 else "Hz"),
        calibration=calibration,
    )


def resample_to_grid(times_s: Sequence[float], values: Sequence[float],
                     grid_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of an irregular series onto a uniform grid.

    Gives PSDs a real frequency axis (Hz) at the cost of low-pass smearing;
    the default per-packet indexing avoids inventing a time base.
    """
    t = np.asarray(times_s, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 2:
        raise ValueError("need at least two points to resample")
    grid = np.arange(t[0], t[-1], 1.0 / grid_hz)
    return grid, np.interp(grid, t, v)


def convergence_time(errors_ppm: Sequence[Optional[float]], threshold_ppm: float,
                     hold_count: int) -> Optional[int]:
    """First index where |error| stays within threshold for hold_count packets.

    Missing estimates (None or NaN) break any window. Returns None when no
    window qualifies ("never").
    """
    if threshold_ppm <= 0:
        raise ValueError(f"threshold must be positive, got {threshold_ppm}")
    if hold_count < 1:
        raise ValueError(f"hold count must be at least 1, got {hold_count}")
    e = np.array([math.nan if v is None else v for v in errors_ppm], dtype=float)
    ok = np.abs(e) <= threshold_ppm  # NaN compares false
    if hold_count > len(ok):
        return None
    run = 0
    for i, good in enumerate(ok):
        run = run + 1 if good else 0
        if run >= hold_count:
            return i - hold_count + 1
    return None


@dataclass
class BiasTest:
    """Deviation of a sample mean from a reference value, in z-score terms."""

    deviation: float
    standard_error: float
    z: float
    n: int


def bias_test(values: Sequence[float], reference: float,
              min_n: int = 30) -> BiasTest:
    """Test whether ``values`` average away from ``reference``.

    Returns the mean deviation, its standard error, and the z-score; a |z|
    beyond a few units flags bias that no amount of averaging removes.
    """
    v = np.asarray([x for x in values if x is not None], dtype=float)
    n = len(v)
    if n < min_n:
        raise ValueError(f"bias test needs at least {min_n} samples, got {n}")
    deviation = float(v.mean() - reference)
    se = float(v.std(ddof=1) / math.sqrt(n))
    z = deviation / se if se > 0 else (0.0 if deviation == 0 else math.inf)
    return BiasTest(deviation=deviation, standard_error=se, z=z, n=n)


@dataclass
class ErrorSeries:
    """Per-packet estimates and their ppm errors for one run."""

    k: np.ndarray
    elapsed_receiver_s: np.ndarray
    ratio: dict[str, np.ndarray] = field(default_factory=dict)
    recovered_hz: dict[str, np.ndarray] = field(default_factory=dict)
    error_ppm: dict[str, np.ndarray] = field(default_factory=dict)


def build_error_series(truth: ScenarioGroundTruth,
                       estimates: dict[str, Sequence[Optional[float]]],
                       elapsed_receiver_s: Sequence[float],
                       pll_name: str = "pll") -> ErrorSeries:
    """Assemble an ErrorSeries from per-packet estimator outputs.

    Ratio estimators recover f_s as f_r_effective / R-hat; the PLL's output
    already is a frequency, so it passes through.  Missing estimates become
    NaN so downstream vector math stays simple; they serialize as blanks.
    """
    n = len(elapsed_receiver_s)
    series = ErrorSeries(
        k=np.arange(n),
        elapsed_receiver_s=np.asarray(elapsed_receiver_s, dtype=float),
    )
    f_true = truth.receiver_hz / truth.ratio_r
    for name, vals in estimates.items():
        arr = np.array([math.nan if v is None else float(v) for v in vals])
        if len(arr) != n:
            raise ValueError(f"estimate stream {name!r} has length {len(arr)}, want {n}")
        series.ratio[name] = arr
        if name == pll_name:
            recovered = arr.copy()
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                recovered = truth.receiver_hz / arr
        series.recovered_hz[name] = recovered
        series.error_ppm[name] = (recovered - f_true) / f_true * 1e6
    return series
