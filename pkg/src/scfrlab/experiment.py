"""Scenario orchestration: build, run, summarize, persist.

A scenario is fully determined by its config (one seed covers traffic
synthesis, channel noise, and loss), so a run is reproducible to the byte.
Scenarios are independent of each other and may execute in parallel; a single
scenario is strictly sequential because every estimator is an order-dependent
accumulator.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import analysis
from .channel import (
    Ar1Delay,
    ConstantDelay,
    DelayModel,
    FifoQueueDelay,
    GammaDelay,
    LoadCorrelatedDelay,
    ScenarioGroundTruth,
    survival_mask,
    transmit,
)
from .clocks import ClockModel, PacketObservation
from .config import ScenarioConfig, validate_config
from .errors import ConfigurationError
from .estimators import (
    ClockRatioPll,
    CumulativeRatio,
    RlsThroughOrigin,
    RtoSample,
    ir_ratio,
    to_rto_samples,
)
from .traffic import (
    DepartureSchedule,
    generate_onoff_stream,
    generate_periodic_stream,
    generate_spread_stream,
    load_frame_trace,
    stamp_departures,
    synthesize_vbr_trace,
)

CSV_COLUMNS = (
    "k", "ts_ticks", "arrival_ticks", "idt", "iat", "tilde_ts", "tilde_tr",
    "delay_s", "r_cr", "r_ls", "r_ir", "f_pll",
    "err_ppm_cr", "err_ppm_ls", "err_ppm_ir", "err_ppm_pll",
)

# seed stream tags so traffic, channel, and loss draws never collide
_TRAFFIC_STREAM = 0
_CHANNEL_STREAM = 1
_LOSS_STREAM = 2


@dataclass
class RunRecord:
    """One CSV row per arrival; None fields serialize as blanks."""

    k: int
    ts_ticks: int
    arrival_ticks: int
    idt: Optional[int] = None
    iat: Optional[int] = None
    tilde_ts: Optional[int] = None
    tilde_tr: Optional[int] = None
    delay_s: Optional[float] = None
    r_cr: Optional[float] = None
    r_ls: Optional[float] = None
    r_ir: Optional[float] = None
    f_pll: Optional[float] = None
    err_ppm_cr: Optional[float] = None
    err_ppm_ls: Optional[float] = None
    err_ppm_ir: Optional[float] = None
    err_ppm_pll: Optional[float] = None


@dataclass
class RunSummary:
    name: str
    seed: int
    packets: int
    no_data: bool = False
    runtime_s: float = 0.0
    ratio_true: float = math.nan
    source_hz_true: float = math.nan
    final_error_ppm: dict[str, float] = field(default_factory=dict)
    convergence_index: dict[str, Optional[int]] = field(default_factory=dict)
    ir_bias_z: Optional[float] = None
    ir_bias_deviation: Optional[float] = None
    clipped_delays: int = 0
    lost_packets: int = 0


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    records: list[RunRecord]
    summary: RunSummary
    truth: Optional[ScenarioGroundTruth] = None
    observations: list[PacketObservation] = field(default_factory=list)
    samples: list[RtoSample] = field(default_factory=list)
    error_series: Optional[analysis.ErrorSeries] = None


def build_clock(cfg) -> ClockModel:
    return ClockModel(nominal_hz=cfg.nominal_hz, offset_ppm=cfg.offset_ppm,
                      counter_width_bits=cfg.counter_bits)


def build_schedule(config: ScenarioConfig) -> DepartureSchedule:
    """Departure schedule for the configured traffic, truncated to the packet budget."""
    t = config.traffic
    n = t.packets
    if n == 0:
        return DepartureSchedule((), ())
    if t.kind == "periodic":
        return generate_periodic_stream(t.periodic_interval_s, n, t.payload_bytes)

    if t.kind == "trace":
        trace = load_frame_trace(t.trace_path)  # the file's fps header wins
        return generate_spread_stream(trace, t.payload_bytes).truncated(n)

    packets_per_frame = max(t.mean_frame_bytes / t.payload_bytes, 1.0)
    n_frames = int(n / packets_per_frame * 1.25) + 16
    seed = [config.run.seed, _TRAFFIC_STREAM]
    while True:
        trace = synthesize_vbr_trace(seed, n_frames, t.mean_frame_bytes,
                                     t.frame_dispersion, fps=t.fps)
        if t.kind == "spread":
            sched = generate_spread_stream(trace, t.payload_bytes)
        else:
            sched = generate_onoff_stream(trace, t.payload_bytes, t.onoff_tx_rate_hz)
        if len(sched) >= n:
            return sched.truncated(n)
        n_frames *= 2


def build_delay_model(config: ScenarioConfig) -> DelayModel:
    ch = config.channel
    if ch.kind == "constant":
        return ConstantDelay(delay_s=ch.constant_delay_s, offset_a_s=ch.offset_a_s)
    if ch.kind == "iid_gamma":
        return GammaDelay(shape=ch.gamma_shape, scale_s=ch.gamma_scale_s,
                          offset_a_s=ch.offset_a_s)
    if ch.kind == "ar1_gaussian":
        return Ar1Delay(mean_s=ch.ar1_mean_s, rho=ch.ar1_rho,
                        sigma_s=ch.ar1_sigma_s, offset_a_s=ch.offset_a_s)
    if ch.kind == "fifo_queue":
        return FifoQueueDelay(service_bytes_per_s=ch.fifo_service_bytes_per_s,
                              cross_load=ch.fifo_cross_load,
                              cross_packet_bytes=ch.fifo_cross_packet_bytes,
                              offset_a_s=ch.offset_a_s)
    if ch.kind == "load_correlated":
        return LoadCorrelatedDelay(base_s=ch.load_base_s,
                                   rate_gain_s2=ch.load_rate_gain_s2,
                                   gamma_shape=ch.load_gamma_shape,
                                   gamma_scale_s=ch.load_gamma_scale_s,
                                   offset_a_s=ch.offset_a_s)
    raise ConfigurationError(f"unknown channel kind {ch.kind!r}")


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run one scenario end to end. Deterministic in (config, seed)."""
    validate_config(config)
    t_start = time.perf_counter()
    seed = config.run.seed

    summary = RunSummary(name=config.run.name, seed=seed, packets=0)
    schedule = build_schedule(config)
    if len(schedule) == 0:
        summary.no_data = True
        summary.runtime_s = time.perf_counter() - t_start
        return ScenarioResult(config=config, records=[], summary=summary)

    source_clock = build_clock(config.source)
    receiver_clock = build_clock(config.receiver)
    stamped = stamp_departures(schedule, source_clock,
                               initial_counter=config.source.initial_counter)
    model = build_delay_model(config)
    observations, truth = transmit(
        stamped, model, receiver_clock, seed=[seed, _CHANNEL_STREAM],
        receiver_initial_counter=config.receiver.initial_counter)

    if config.channel.loss_rate > 0:
        mask = survival_mask(len(observations), config.channel.loss_rate,
                             seed=[seed, _LOSS_STREAM])
        summary.lost_packets = int(len(observations) - mask.sum())
        observations = [o for o, keep in zip(observations, mask) if keep]
        truth.delays_s = truth.delays_s[mask]
        if not observations:
            summary.no_data = True
            summary.runtime_s = time.perf_counter() - t_start
            return ScenarioResult(config=config, records=[], summary=summary)

    enabled = config.estimators.enabled_names()
    cr = CumulativeRatio() if "cr" in enabled else None
    rls = (RlsThroughOrigin(config.rls.r0, config.rls.p0)
           if "rls" in enabled else None)
    pll = (ClockRatioPll(free_run_hz=config.pll.free_run_hz,
                         kp=config.pll.kp, ki=config.pll.ki,
                         unit_gain_hz_per_cycle=config.pll.unit_gain_hz_per_cycle,
                         source_width_bits=config.source.counter_bits)
           if "pll" in enabled else None)
    want_ir = "ir" in enabled

    receiver_hz = truth.receiver_hz
    pll_counter_mode = config.pll.arrival_mode == "counter"

    records: list[RunRecord] = []
    samples: list[RtoSample] = []
    estimates: dict[str, list[Optional[float]]] = {name: [None] for name in enabled}
    elapsed_receiver = [0.0]

    first = observations[0]
    records.append(RunRecord(k=0, ts_ticks=first.ts_ticks,
                             arrival_ticks=first.arrival_ticks,
                             delay_s=float(truth.delays_s[0])))
    if pll is not None:
        pll.update(first.arrival_time_s if not pll_counter_mode else 0.0,
                   first.ts_ticks)

    for k, (obs, sample) in enumerate(
            zip(observations[1:],
                to_rto_samples(observations, config.source.counter_bits,
                               config.receiver.counter_bits)),
            start=1):
        samples.append(sample)
        elapsed = sample.tilde_tr / receiver_hz
        elapsed_receiver.append(elapsed)
        rec = RunRecord(k=k, ts_ticks=obs.ts_ticks, arrival_ticks=obs.arrival_ticks,
                        idt=sample.idt, iat=sample.iat,
                        tilde_ts=sample.tilde_ts, tilde_tr=sample.tilde_tr,
                        delay_s=float(truth.delays_s[k]))
        if cr is not None:
            rec.r_cr = cr.update(sample)
            estimates["cr"].append(rec.r_cr)
        if rls is not None:
            rec.r_ls = rls.update(sample)
            estimates["rls"].append(rec.r_ls)
        if want_ir:
            rec.r_ir = ir_ratio(sample)
            estimates["ir"].append(rec.r_ir)
        if pll is not None:
            arrival_s = (sample.tilde_tr / receiver_hz if pll_counter_mode
                         else obs.arrival_time_s)
            rec.f_pll = pll.update(arrival_s, obs.ts_ticks)
            estimates["pll"].append(rec.f_pll)
        records.append(rec)

    series = analysis.build_error_series(truth, estimates, elapsed_receiver)
    for rec in records:
        idx = rec.k
        if "cr" in series.error_ppm:
            rec.err_ppm_cr = _none_if_nan(series.error_ppm["cr"][idx])
        if "rls" in series.error_ppm:
            rec.err_ppm_ls = _none_if_nan(series.error_ppm["rls"][idx])
        if "ir" in series.error_ppm:
            rec.err_ppm_ir = _none_if_nan(series.error_ppm["ir"][idx])
        if "pll" in series.error_ppm:
            rec.err_ppm_pll = _none_if_nan(series.error_ppm["pll"][idx])

    summary.packets = len(records)
    summary.ratio_true = truth.ratio_r
    summary.source_hz_true = truth.receiver_hz / truth.ratio_r
    summary.clipped_delays = truth.clipped
    for name in enabled:
        err = series.error_ppm[name]
        finite = err[np.isfinite(err)]
        summary.final_error_ppm[name] = float(finite[-1]) if len(finite) else math.nan
        summary.convergence_index[name] = analysis.convergence_time(
            list(err), config.analysis.convergence_threshold_ppm,
            config.analysis.convergence_hold)
    if want_ir:
        ir_values = [v for v in estimates["ir"] if v is not None]
        if len(ir_values) >= 30:
            bias = analysis.bias_test(ir_values, truth.ratio_r)
            summary.ir_bias_z = bias.z
            summary.ir_bias_deviation = bias.deviation
    summary.runtime_s = time.perf_counter() - t_start

    return ScenarioResult(config=config, records=records, summary=summary,
                          truth=truth, observations=observations,
                          samples=samples, error_series=series)


def _none_if_nan(value: float) -> Optional[float]:
    return None if math.isnan(value) else float(value)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records: Sequence[RunRecord]) -> str:
    """Serialize records with a fixed column order and LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_records_csv(records: Sequence[RunRecord], path: Union[str, Path]) -> None:
    Path(path).write_text(records_to_csv(records), encoding="utf-8", newline="")


def read_records_csv(path: Union[str, Path]) -> list[RunRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        records = []
        for row in reader:
            records.append(RunRecord(
                k=int(row["k"]),
                ts_ticks=int(row["ts_ticks"]),
                arrival_ticks=int(row["arrival_ticks"]),
                **{c: (None if row[c] == "" else (int(row[c]) if c in
                       ("idt", "iat", "tilde_ts", "tilde_tr") else float(row[c])))
                   for c in CSV_COLUMNS[3:]},
            ))
    return records


def noise_psd(result: ScenarioResult, segment_len: Optional[int] = None,
              overlap: Optional[float] = None,
              window: Optional[str] = None) -> analysis.PsdReport:
    """Welch PSD of the run's delay-deviation noise, per-packet indexed.

    The series mean is removed first so the spectrum integrates to the noise
    variance rather than being swamped by a DC term.
    """
    if result.truth is None or not result.observations:
        raise ValueError("scenario result carries no observations")
    cfg = result.config.analysis
    d_tilde, _, _ = analysis.noise_series(result.truth, result.observations,
                                          result.config.source.counter_bits)
    x = d_tilde - d_tilde.mean()
    return analysis.welch_psd(
        x,
        sample_rate=1.0,
        segment_len=segment_len or cfg.psd_segment,
        overlap_fraction=cfg.psd_overlap if overlap is None else overlap,
        window=window or cfg.psd_window,
    )


def _run_matrix_entry(args) -> RunSummary:
    config, out_dir = args
    result = run_scenario(config)
    if out_dir is not None:
        write_records_csv(result.records,
                          Path(out_dir) / f"{config.run.name}.csv")
    return result.summary


def run_matrix(configs: Sequence[ScenarioConfig],
               out_dir: Union[str, Path, None] = None,
               max_workers: int = 1) -> list[RunSummary]:
    """Run scenarios independently and collect their summaries.

    All configs are validated before anything runs. With ``max_workers > 1``
    scenarios execute in separate processes; results are identical to a
    sequential run because each scenario owns its seed and state.
    """
    for config in configs:
        validate_config(config)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(config, out_dir) for config in configs]
    if max_workers <= 1 or len(configs) <= 1:
        return [_run_matrix_entry(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_matrix_entry, jobs))


def summaries_table(summaries: Sequence[RunSummary]) -> str:
    """One comparison row per scenario."""
    header = f"{'scenario':20s} {'packets':>8s} {'est':>4s} {'final ppm':>12s} {'conv idx':>9s}"
    lines = [header, "-" * len(header)]
    for s in summaries:
        if s.no_data:
            lines.append(f"{s.name:20s} {'0':>8s}  (no data)")
            continue
        for name in s.final_error_ppm:
            conv = s.convergence_index.get(name)
            lines.append(
                f"{s.name:20s} {s.packets:8d} {name:>4s} "
                f"{s.final_error_ppm[name]:12.4f} "
                f"{conv if conv is not None else 'never':>9}"
            )
    return "\n".join(lines)
