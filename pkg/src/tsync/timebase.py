"""Integer-nanosecond simulation time and free-running oscillator models.

All clocks are kept as integer nanoseconds on top of a femtosecond phase
accumulator, so deterministic drift audits are exact and independent of
step partitioning. Oscillator noise is generated as power-law fractional
frequency: white FM, flicker FM and random-walk FM, with amplitudes
expressed as the Allan-deviation level at tau = 1 s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

NS_PER_S = 1_000_000_000
FS_PER_NS = 1_000_000

# Checked-arithmetic bound: instants and phase stay inside a 64-bit ns range.
_MAX_INSTANT_NS = 2**63 - 1
_MAX_PHASE_FS = (2**63 - 1) * FS_PER_NS

WHITE_FM = -0.5
FLICKER_FM = 0.0
RANDOM_WALK_FM = 0.5

# Unit-variance fractional-differencing flicker input settles at a flat
# ADEV level of sqrt(2 ln2 / pi) (verified numerically; small-tau points
# sit a few percent above). Dividing by it makes the amplitude parameter
# the ADEV level directly.
_FLICKER_UNIT_ADEV = math.sqrt(2.0 * math.log(2.0) / math.pi)


class TimeReversalError(ValueError):
    """A clock was asked to produce a reading earlier than its state."""


class PhaseOverflowError(OverflowError):
    """Phase accumulator left the representable 64-bit ns range."""


@dataclass(frozen=True, order=True)
class SimInstant:
    """A point in time: whole seconds plus nanoseconds in [0, 1e9).

    Ordering is lexicographic on (seconds, frac_ns), which matches
    chronological order because frac_ns is always non-negative.
    """

    seconds: int = 0
    frac_ns: int = 0

    def __post_init__(self):
        if not 0 <= self.frac_ns < NS_PER_S:
            raise ValueError(f"frac_ns out of range: {self.frac_ns}")
        if abs(self.total_ns) > _MAX_INSTANT_NS:
            raise OverflowError("instant outside 64-bit nanosecond range")

    @classmethod
    def from_ns(cls, total_ns: int) -> "SimInstant":
        seconds, frac = divmod(int(total_ns), NS_PER_S)
        return cls(seconds, frac)

    @classmethod
    def from_s(cls, seconds: float) -> "SimInstant":
        return cls.from_ns(round(seconds * NS_PER_S))

    @property
    def total_ns(self) -> int:
        return self.seconds * NS_PER_S + self.frac_ns

    def add_ns(self, delta_ns: int) -> "SimInstant":
        return SimInstant.from_ns(self.total_ns + int(delta_ns))

    def sub(self, other: "SimInstant") -> int:
        """Difference self - other in nanoseconds."""
        return self.total_ns - other.total_ns

    def round_s(self) -> int:
        """Nearest whole second (half-up)."""
        return (self.total_ns + NS_PER_S // 2) // NS_PER_S

    def __str__(self) -> str:
        return f"{self.seconds}.{self.frac_ns:09d}s"


@dataclass(frozen=True)
class ClockReading:
    """A time read from some clock, tagged with the timescale it lives on."""

    instant: SimInstant
    timescale: str = "node"

    @property
    def total_ns(self) -> int:
        return self.instant.total_ns


@dataclass(frozen=True)
class OscillatorParams:
    """Static description of a free-running oscillator.

    Noise amplitudes are the per-process ADEV levels at tau = 1 s; each
    process alone produces ADEV amplitude * tau**mu with mu = -0.5
    (white FM), 0 (flicker FM) and +0.5 (random-walk FM).
    """

    f0_ppm: float = 0.0
    temp_coeff_ppm_per_c: float = 0.0
    ref_temp_c: float = 25.0
    aging_ppm_per_day: float = 0.0
    noise_white_fm: float = 0.0
    noise_flicker_fm: float = 0.0
    noise_randomwalk_fm: float = 0.0

    def __post_init__(self):
        if abs(self.f0_ppm) > 1000.0:
            raise ValueError("f0_ppm beyond 1000 ppm sanity bound")
        for name in ("noise_white_fm", "noise_flicker_fm", "noise_randomwalk_fm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def freq_ppm_at(self, temp_c: float, elapsed_days: float) -> float:
        """Deterministic fractional frequency error in ppm."""
        return (
            self.f0_ppm
            + self.temp_coeff_ppm_per_c * (temp_c - self.ref_temp_c)
            + self.aging_ppm_per_day * elapsed_days
        )


@dataclass(frozen=True)
class ClockState:
    """Evolving state of one node clock against true time.

    The phase offset (node clock minus true time) is accumulated in
    integer femtoseconds so sub-nanosecond ppm increments never erode.
    """

    phase_fs: int = 0
    freq_error_ppm: float = 0.0
    last_update: SimInstant = field(default_factory=SimInstant)

    def __post_init__(self):
        if not math.isfinite(self.freq_error_ppm):
            raise ValueError("freq_error_ppm must be finite")
        if abs(self.phase_fs) > _MAX_PHASE_FS:
            raise PhaseOverflowError("phase accumulator overflow")

    @classmethod
    def from_offset_ns(cls, offset_ns: int, freq_error_ppm: float = 0.0,
                       last_update: SimInstant | None = None) -> "ClockState":
        return cls(int(offset_ns) * FS_PER_NS, freq_error_ppm,
                   last_update or SimInstant())

    @property
    def phase_offset_ns(self) -> int:
        return _round_div(self.phase_fs, FS_PER_NS)


def _round_div(value: int, div: int) -> int:
    """Integer division rounded half away from zero."""
    if value >= 0:
        return (value + div // 2) // div
    return -((-value + div // 2) // div)


def advance(state: ClockState, params: OscillatorParams, dt_ns: int,
            temp_c: float, noise: "NoiseStream | None" = None) -> ClockState:
    """Propagate a clock forward by dt_ns of true time.

    Frequency is held piecewise constant over the step (evaluated at the
    step start), so deterministic drift is exact and independent of how
    an interval is partitioned. One noise-stream draw is consumed per
    call when a stream is supplied.
    """
    dt_ns = int(dt_ns)
    if dt_ns <= 0:
        raise ValueError("dt_ns must be positive")
    elapsed_days = state.last_update.total_ns / (86400.0 * NS_PER_S)
    det_ppm = params.freq_ppm_at(temp_c, elapsed_days)

    noise_phase_ns = 0.0
    if noise is not None:
        noise_phase_ns = noise.next_phase_ns(dt_ns)

    # 1 ppm * 1 ns == 1 fs, so the ppm product is already in femtoseconds.
    inc_fs = round(det_ppm * dt_ns) + round(noise_phase_ns * FS_PER_NS)
    new_fs = state.phase_fs + inc_fs
    if abs(new_fs) > _MAX_PHASE_FS:
        raise PhaseOverflowError("phase accumulator overflow")

    noise_ppm = noise_phase_ns / dt_ns * 1e6
    return ClockState(new_fs, det_ppm + noise_ppm, state.last_update.add_ns(dt_ns))


def slew_phase(state: ClockState, delta_fs: int) -> ClockState:
    """Apply an externally commanded phase change (servo slew or step)."""
    return ClockState(state.phase_fs + int(delta_fs), state.freq_error_ppm,
                      state.last_update)


def read_clock(state: ClockState, t_true: SimInstant,
               extra_freq_ppm: float = 0.0) -> ClockReading:
    """Node-local time at true instant t_true.

    Extrapolates with the current frequency error (plus any externally
    applied steering rate) from the last update; pure.
    """
    delta_ns = t_true.sub(state.last_update)
    if delta_ns < 0:
        raise TimeReversalError(
            f"read at {t_true} precedes clock state at {state.last_update}")
    drift_fs = round((state.freq_error_ppm + extra_freq_ppm) * delta_ns)
    offset_ns = _round_div(state.phase_fs + drift_fs, FS_PER_NS)
    return ClockReading(t_true.add_ns(offset_ns))


def gen_power_law_noise(mu: float, amplitude: float, n: int, tau0_s: float,
                        seed) -> np.ndarray:
    """Fractional-frequency series with ADEV amplitude * tau**mu.

    mu selects the process: -0.5 white FM, 0 flicker FM, +0.5 random-walk
    FM. The flicker branch shapes white noise with the fractional
    differencing kernel h[i] = h[i-1] * (alpha/2 + i - 1) / i (alpha = 1),
    which realises a 1/f frequency spectrum; white and random-walk scale
    factors follow from the standard two-sample variance of iid and
    Wiener frequency processes.

    Deterministic per seed. Only the ADEV slope is contractual for the
    flicker branch; the level is calibrated to the amplitude.
    """
    n = int(n)
    if n < 2:
        raise ValueError("n must be >= 2")
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if tau0_s <= 0:
        raise ValueError("tau0_s must be > 0")
    if amplitude == 0.0:
        return np.zeros(n)
    rng = np.random.default_rng(seed)
    if mu == WHITE_FM:
        # iid frequency: avar(tau) = sigma^2 * tau0 / tau
        return rng.standard_normal(n) * (amplitude / math.sqrt(tau0_s))
    if mu == RANDOM_WALK_FM:
        # Wiener frequency with rate q: avar(tau) = q * tau / 3
        step = amplitude * math.sqrt(3.0 * tau0_s)
        return np.cumsum(rng.standard_normal(n)) * step
    if mu == FLICKER_FM:
        h = np.empty(n)
        h[0] = 1.0
        for i in range(1, n):
            h[i] = h[i - 1] * (0.5 + i - 1) / i
        w = rng.standard_normal(n)
        y = fftconvolve(h, w)[:n]
        return y * (amplitude / _FLICKER_UNIT_ADEV)
    raise ValueError(f"unsupported power-law exponent mu={mu}")


class NoiseStream:
    """Sequential per-step oscillator noise for one clock trajectory.

    Pre-generates the three component series at the nominal step tau0 and
    hands out one composite phase increment per advance() call. White FM
    is drawn per step and scaled by sqrt(dt) so off-nominal step sizes
    (for example edge-aligned sub-steps) stay physically consistent.
    """

    def __init__(self, params: OscillatorParams, seed, n_steps: int,
                 tau0_s: float = 1.0):
        self._tau0_s = tau0_s
        self._i = 0
        kw, kf, kr = (params.noise_white_fm, params.noise_flicker_fm,
                      params.noise_randomwalk_fm)
        self._silent = kw == kf == kr == 0.0
        if self._silent:
            return
        seq = np.random.SeedSequence(seed) if not isinstance(
            seed, np.random.SeedSequence) else seed
        s_w, s_f, s_r = seq.spawn(3)
        n = max(2, int(n_steps))
        self._white_sigma = kw
        self._white = np.random.default_rng(s_w).standard_normal(n) if kw else None
        self._flicker = gen_power_law_noise(FLICKER_FM, kf, n, tau0_s, s_f) if kf else None
        self._rw = gen_power_law_noise(RANDOM_WALK_FM, kr, n, tau0_s, s_r) if kr else None
        self._n = n

    def next_phase_ns(self, dt_ns: int) -> float:
        """Integrated noise phase over one step, in nanoseconds."""
        if self._silent:
            return 0.0
        if self._i >= self._n:
            raise RuntimeError("noise stream exhausted; size the stream to the run")
        i = self._i
        self._i = i + 1
        dt_s = dt_ns / NS_PER_S
        phase = 0.0
        if self._white is not None:
            phase += self._white_sigma * math.sqrt(dt_s) * self._white[i] * NS_PER_S
        if self._flicker is not None:
            phase += self._flicker[i] * dt_ns
        if self._rw is not None:
            phase += self._rw[i] * dt_ns
        return phase
