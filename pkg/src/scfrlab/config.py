"""Scenario configuration: defaults, validation, and the flat file format.

The config file is plain UTF-8 text, one ``section.key = value`` per line,
``#`` comments allowed.  Flat keys diff cleanly and parse anywhere; the
serializer emits every field, so round-tripping a config through a file
reproduces it exactly.

Defaults reproduce the reference measurement setup: a 90 kHz source clock
running 200 ppm fast stamping 32-bit timestamps, a 16 MHz receiver clock
running 200 ppm slow driving a 48-bit counter, 30 fps video-like traffic
with 1460-byte payloads, least-squares initialization from the nominal
frequency ratio, and PLL gains 1e-4/1e-6 around an 89.982 kHz free-running
oscillator.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigurationError

TRAFFIC_KINDS = ("spread", "onoff", "periodic", "trace")
CHANNEL_KINDS = ("constant", "iid_gamma", "ar1_gaussian", "fifo_queue", "load_correlated")
ESTIMATOR_NAMES = ("cr", "rls", "ir", "pll")
PLL_ARRIVAL_MODES = ("real", "counter")


@dataclass
class ClockConfig:
    nominal_hz: float
    offset_ppm: float
    counter_bits: int
    initial_counter: int = 0


@dataclass
class TrafficConfig:
    kind: str = "spread"
    fps: float = 30.0
    payload_bytes: int = 1460
    onoff_tx_rate_hz: float = 90018.0 / 50  # effective source rate / 50
    periodic_interval_s: float = 0.0059026
    mean_frame_bytes: float = 7550.0
    frame_dispersion: float = 0.5
    trace_path: str = ""
    packets: int = 100_000


@dataclass
class ChannelConfig:
    kind: str = "constant"
    offset_a_s: float = 0.0
    loss_rate: float = 0.0
    constant_delay_s: float = 0.005
    gamma_shape: float = 16.0
    gamma_scale_s: float = 6.25e-5
    ar1_mean_s: float = 1e-3
    ar1_rho: float = 0.9
    ar1_sigma_s: float = 1e-4
    fifo_service_bytes_per_s: float = 12.5e6
    fifo_cross_load: float = 0.5
    fifo_cross_packet_bytes: int = 1460
    load_base_s: float = 0.0
    load_rate_gain_s2: float = 2e-6
    load_gamma_shape: float = 16.0
    load_gamma_scale_s: float = 5e-5


@dataclass
class EstimatorsConfig:
    enabled: str = "cr,rls,ir,pll"

    def enabled_names(self) -> tuple[str, ...]:
        return tuple(n.strip() for n in self.enabled.split(",") if n.strip())


@dataclass
class RlsConfig:
    r0: float = 16_000_000 / 90_000
    p0: float = 10.0


@dataclass
class PllConfig:
    kp: float = 1e-4
    ki: float = 1e-6
    free_run_hz: float = 89_982.0
    unit_gain_hz_per_cycle: float = 1.0
    arrival_mode: str = "real"


@dataclass
class AnalysisConfig:
    psd_segment: int = 4096
    psd_overlap: float = 0.5
    psd_window: str = "hann"
    convergence_threshold_ppm: float = 5.0
    convergence_hold: int = 100


@dataclass
class RunConfig:
    seed: int = 1
    name: str = "scenario"


@dataclass
class ScenarioConfig:
    source: ClockConfig = field(default_factory=lambda: ClockConfig(
        nominal_hz=90_000.0, offset_ppm=200.0, counter_bits=32))
    receiver: ClockConfig = field(default_factory=lambda: ClockConfig(
        nominal_hz=16e6, offset_ppm=-200.0, counter_bits=48))
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    estimators: EstimatorsConfig = field(default_factory=EstimatorsConfig)
    rls: RlsConfig = field(default_factory=RlsConfig)
    pll: PllConfig = field(default_factory=PllConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def copy(self) -> "ScenarioConfig":
        return dataclasses.replace(
            self,
            **{f.name: dataclasses.replace(getattr(self, f.name)) for f in fields(self)},
        )


def default_config() -> ScenarioConfig:
    return ScenarioConfig()


def validate_config(config: ScenarioConfig) -> None:
    """Check every field; raises one error listing all violations."""
    problems: list[str] = []

    def check(cond: bool, message: str) -> None:
        if not cond:
            problems.append(message)

    for side in ("source", "receiver"):
        clk = getattr(config, side)
        check(clk.nominal_hz > 0, f"{side}.nominal_hz must be positive")
        check(clk.nominal_hz * (1 + clk.offset_ppm * 1e-6) > 0,
              f"{side}: effective frequency must be positive")
        check(8 <= clk.counter_bits <= 64, f"{side}.counter_bits must be in [8, 64]")
        if 8 <= clk.counter_bits <= 64:
            check(0 <= clk.initial_counter < (1 << clk.counter_bits),
                  f"{side}.initial_counter must fit the counter width")

    t = config.traffic
    check(t.kind in TRAFFIC_KINDS, f"traffic.kind must be one of {TRAFFIC_KINDS}")
    check(t.fps > 0, "traffic.fps must be positive")
    check(t.payload_bytes > 0, "traffic.payload_bytes must be positive")
    check(t.onoff_tx_rate_hz > 0, "traffic.onoff_tx_rate_hz must be positive")
    check(t.periodic_interval_s > 0, "traffic.periodic_interval_s must be positive")
    check(t.mean_frame_bytes > 0, "traffic.mean_frame_bytes must be positive")
    check(t.frame_dispersion > 0, "traffic.frame_dispersion must be positive")
    check(t.packets >= 0, "traffic.packets must be non-negative")
    if t.kind == "trace":
        check(bool(t.trace_path), "traffic.trace_path is required for trace traffic")

    ch = config.channel
    check(ch.kind in CHANNEL_KINDS, f"channel.kind must be one of {CHANNEL_KINDS}")
    check(0 <= ch.loss_rate < 1, "channel.loss_rate must be in [0, 1)")
    check(ch.offset_a_s >= 0, "channel.offset_a_s must be non-negative")
    check(ch.constant_delay_s >= 0, "channel.constant_delay_s must be non-negative")
    check(ch.gamma_shape > 0, "channel.gamma_shape must be positive")
    check(ch.gamma_scale_s > 0, "channel.gamma_scale_s must be positive")
    check(-1 < ch.ar1_rho < 1, "channel.ar1_rho must satisfy |rho| < 1")
    check(ch.ar1_sigma_s >= 0, "channel.ar1_sigma_s must be non-negative")
    check(ch.fifo_service_bytes_per_s > 0, "channel.fifo_service_bytes_per_s must be positive")
    check(0 <= ch.fifo_cross_load < 1, "channel.fifo_cross_load must be in [0, 1)")
    check(ch.fifo_cross_packet_bytes > 0, "channel.fifo_cross_packet_bytes must be positive")
    check(ch.load_base_s >= 0, "channel.load_base_s must be non-negative")
    check(ch.load_rate_gain_s2 >= 0, "channel.load_rate_gain_s2 must be non-negative")
    check(ch.load_gamma_shape > 0, "channel.load_gamma_shape must be positive")
    check(ch.load_gamma_scale_s >= 0, "channel.load_gamma_scale_s must be non-negative")

    names = config.estimators.enabled_names()
    check(len(names) > 0, "estimators.enabled must name at least one estimator")
    for name in names:
        check(name in ESTIMATOR_NAMES,
              f"estimators.enabled contains unknown estimator {name!r}")

    check(config.rls.p0 > 0, "rls.p0 must be positive")
    check(config.rls.r0 > 0, "rls.r0 must be positive")
    check(config.pll.free_run_hz > 0, "pll.free_run_hz must be positive")
    check(config.pll.unit_gain_hz_per_cycle > 0, "pll.unit_gain_hz_per_cycle must be positive")
    check(config.pll.arrival_mode in PLL_ARRIVAL_MODES,
          f"pll.arrival_mode must be one of {PLL_ARRIVAL_MODES}")

    a = config.analysis
    check(a.psd_segment >= 8, "analysis.psd_segment must be at least 8")
    check(0 <= a.psd_overlap < 1, "analysis.psd_overlap must be in [0, 1)")
    check(a.convergence_threshold_ppm > 0, "analysis.convergence_threshold_ppm must be positive")
    check(a.convergence_hold >= 1, "analysis.convergence_hold must be at least 1")

    check(config.run.seed >= 0, "run.seed must be non-negative")

    if problems:
        raise ConfigurationError(
            "invalid configuration:\n  " + "\n  ".join(problems)
        )


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ScenarioConfig) -> str:
    """Emit every field as ``section.key = value`` lines."""
    lines: list[str] = []
    for section_field in fields(config):
        section = getattr(config, section_field.name)
        for f in fields(section):
            lines.append(f"{section_field.name}.{f.name} = "
                         f"{_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def _coerce(raw: str, target_type: type, key: str):
    raw = raw.strip()
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"value for {key} is not a {target_type.__name__}: "
                                 f"{raw!r}") from None


def parse_config(text: str, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Parse ``section.key = value`` lines over the defaults.

    Unknown sections or keys are reported with their line numbers; every
    problem in the file is listed in a single error.
    """
    config = (base or default_config()).copy()
    problems: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'section.key = value', got {raw!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key.count(".") != 1:
            problems.append(f"line {lineno}: key must look like section.key, got {key!r}")
            continue
        section_name, field_name = key.split(".")
        section = getattr(config, section_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            problems.append(f"line {lineno}: unknown section {section_name!r}")
            continue
        section_fields = {f.name: f for f in fields(section)}
        if field_name not in section_fields:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        target_type = type(getattr(section, field_name))
        try:
            setattr(section, field_name, _coerce(value, target_type, key))
        except ConfigurationError as err:
            problems.append(f"line {lineno}: {err}")
    if problems:
        raise ConfigurationError("config parse failed:\n  " + "\n  ".join(problems))
    return config


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(config: ScenarioConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize_config(config), encoding="utf-8")
