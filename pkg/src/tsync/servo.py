"""Clock discipline: PI steering, offset measurement and holdover.

The servo consumes offset samples from one of three sources (sentence
stream only, pulse train only, or pulses labelled by sentences) and
produces phase steps or frequency corrections. During a total signal
outage an externally observed offset history can be fitted with a linear
drift model whose prediction bridges the gap.
"""

from __future__ import annotations

import datetime
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .nmea import GnssFix, absolute_second_ns
from .pps import PpsEvent, UnlabeledEdge
from .timebase import ClockReading, ClockState, NS_PER_S

# ppm expressed as ns of phase per second of elapsed time.
NS_PER_S_PER_PPM = 1000.0

# Minimum history span before a drift slope is considered trustworthy.
MIN_HOLDOVER_SPAN_S = 60.0

HISTORY_CAPACITY = 4096


class NonMonotonicSample(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


class HoldoverInactive(ValueError):
    pass


class InvalidFix(ValueError):
    pass


class ServoMode(str, Enum):
    NMEA_ONLY = "nmea"
    PPS_ONLY = "pps"
    NMEA_PLUS_PPS = "nmea+pps"


class SampleSource(str, Enum):
    NMEA = "NMEA"
    PPS = "PPS"
    COMBINED = "COMBINED"
    HOLDOVER = "HOLDOVER"


@dataclass(frozen=True)
class OffsetSample:
    """One measured clock offset (node minus reference) in ns."""

    elapsed_s: float
    offset_ns: int
    source: SampleSource


@dataclass(frozen=True)
class ServoConfig:
    """Gains and thresholds of the discipline loop.

    kp and ki are dimensionless per-update gains of a PI law applied in
    velocity form; offsets beyond step_threshold_ns are stepped out
    instead of slewed.
    """

    mode: ServoMode = ServoMode.NMEA_PLUS_PPS
    kp: float = 2.0**-5
    ki: float = 2.0**-10
    step_threshold_ns: int = 128_000_000
    poll_interval_s: float = 1.0
    holdover_window_s: float = 60.0
    holdover_ma_points: int = 60
    holdover_predict: bool = True

    def __post_init__(self):
        if self.kp <= 0 or self.ki <= 0:
            raise ValueError("gains must be positive")
        if self.step_threshold_ns <= 0:
            raise ValueError("step_threshold_ns must be positive")
        if self.poll_interval_s <= 0:
            raise ValueError("poll_interval_s must be positive")


@dataclass(frozen=True)
class HoldoverState:
    active: bool = False
    slope_ns_per_s: float = 0.0
    entered_at_s: float | None = None


@dataclass(frozen=True)
class ClockAdjustment:
    """What the loop wants done to the clock after one sample."""

    step_ns: int = 0
    freq_correction_ppm: float = 0.0
    stepped: bool = False


@dataclass
class ServoState:
    """Evolving loop state; one logical owner advances it at a time."""

    config: ServoConfig
    freq_correction_ppm: float = 0.0
    last_offset_ns: int = 0
    offset_history: deque = field(
        default_factory=lambda: deque(maxlen=HISTORY_CAPACITY))
    holdover: HoldoverState = field(default_factory=HoldoverState)

    @property
    def mode(self) -> ServoMode:
        return self.config.mode


def measure_offset_nmea(fix: GnssFix, local_rx: ClockReading,
                        est_path_delay_ns: int,
                        epoch_date: datetime.date) -> OffsetSample:
    """Offset of the local clock against a sentence's named second.

    The serial transport contributes its full latency spread, so these
    samples carry millisecond-scale noise around the estimated constant
    path delay.
    """
    if not fix.fix_valid:
        raise InvalidFix("cannot take timing from an invalid fix")
    boundary_ns = absolute_second_ns(fix, epoch_date)
    offset = local_rx.total_ns - (boundary_ns + int(est_path_delay_ns))
    return OffsetSample(boundary_ns / NS_PER_S, offset, SampleSource.NMEA)


def measure_offset_pps(event: PpsEvent, local_capture: ClockReading,
                       source: SampleSource = SampleSource.PPS) -> OffsetSample:
    """Offset of the local clock against a labelled edge's second."""
    if event.labeled_second is None:
        raise UnlabeledEdge("cannot measure against an unlabelled edge")
    offset = local_capture.total_ns - event.labeled_second * NS_PER_S
    return OffsetSample(float(event.labeled_second), offset, source)


def update(servo: ServoState, sample: OffsetSample,
           clock: ClockState) -> tuple[ServoState, ClockAdjustment]:
    """Fold one offset sample into the loop.

    Large offsets are stepped out (history cleared); otherwise the
    frequency correction is moved by the PI increment

        d_freq = -(kp * (e - e_prev) + ki * e) / poll

    which telescopes to the classic proportional-plus-integral law on the
    offset history. Reaching this point always ends holdover.
    """
    cfg = servo.config
    if servo.offset_history and sample.elapsed_s <= servo.offset_history[-1][0]:
        raise NonMonotonicSample(
            f"sample at {sample.elapsed_s}s not after history tail")
    servo.holdover = HoldoverState()
    e = sample.offset_ns
    if abs(e) > cfg.step_threshold_ns:
        servo.offset_history.clear()
        servo.last_offset_ns = 0
        adj = ClockAdjustment(step_ns=-e,
                              freq_correction_ppm=servo.freq_correction_ppm,
                              stepped=True)
        return servo, adj
    de = e - servo.last_offset_ns
    servo.freq_correction_ppm -= (cfg.kp * de + cfg.ki * e) / (
        cfg.poll_interval_s * NS_PER_S_PER_PPM)
    servo.last_offset_ns = e
    servo.offset_history.append((sample.elapsed_s, e))
    return servo, ClockAdjustment(0, servo.freq_correction_ppm, False)


def observe(servo: ServoState, sample: OffsetSample) -> ServoState:
    """Record an externally measured offset without steering the loop.

    Used for the monitored drift series during an outage; these samples
    feed the holdover slope fit only.
    """
    if servo.offset_history and sample.elapsed_s <= servo.offset_history[-1][0]:
        raise NonMonotonicSample(
            f"sample at {sample.elapsed_s}s not after history tail")
    servo.offset_history.append((sample.elapsed_s, sample.offset_ns))
    return servo


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return values
    kernel = np.full(window, 1.0 / window)
    return np.convolve(values, kernel, mode="valid")


def enter_holdover(servo: ServoState, now_s: float) -> ServoState:
    """Fit the drift slope from recent history and activate holdover.

    now_s anchors the prediction clock; pass the instant the reference
    was lost so predictions cover drift accumulated before activation.
    The slope is an ordinary least-squares fit over the moving-averaged
    tail of the offset history.
    """
    cfg = servo.config
    hist = list(servo.offset_history)
    if len(hist) < 2 or hist[-1][0] - hist[0][0] < MIN_HOLDOVER_SPAN_S:
        raise InsufficientHistory(
            f"need >= 2 samples spanning >= {MIN_HOLDOVER_SPAN_S:.0f} s")
    t_last = hist[-1][0]
    window = [(t, v) for t, v in hist if t >= t_last - cfg.holdover_window_s]
    ts = np.array([t for t, _ in window])
    vs = np.array([float(v) for _, v in window])
    w = min(cfg.holdover_ma_points, max(1, ts.size // 4), ts.size - 1)
    w = max(1, w)
    ma_t = _moving_average(ts, w)
    ma_v = _moving_average(vs, w)
    slope = float(np.polyfit(ma_t, ma_v, 1)[0])
    servo.holdover = HoldoverState(True, slope, float(now_s))
    return servo


def predict_offset(servo: ServoState, elapsed_since_holdover_s: float) -> float:
    """Predicted accumulated drift (ns) since holdover began."""
    if not servo.holdover.active:
        raise HoldoverInactive("no drift model is active")
    return servo.holdover.slope_ns_per_s * elapsed_since_holdover_s
