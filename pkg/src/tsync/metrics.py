"""Statistics for clock offset series.

Covers the accuracy/precision bound checks, exact mean and sample
standard deviation, the overlapping Allan deviation with a power-law
noise-template fit, and five-number box summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

NS_PER_S = 1_000_000_000

# Template exponents fitted against ADEV curves: white, flicker and
# random-walk frequency modulation.
TEMPLATE_MUS = (-0.5, 0.0, 0.5)


class DegenerateFitError(ValueError):
    """Noise-template fit attempted on an all-zero ADEV curve."""


@dataclass(frozen=True)
class AllanPoint:
    """Overlapping Allan deviation at one averaging time."""

    tau_s: float
    adev: float
    n_pairs: int

    def __post_init__(self):
        if self.tau_s <= 0 or self.adev < 0 or self.n_pairs < 1:
            raise ValueError("invalid AllanPoint")


@dataclass(frozen=True)
class NoiseFit:
    """Coefficients of adev(tau) ~ sum of kappa * tau**mu over the template."""

    kappa_white: float
    kappa_flicker: float
    kappa_randomwalk: float
    residual: float

    def __post_init__(self):
        if min(self.kappa_white, self.kappa_flicker, self.kappa_randomwalk) < 0:
            raise ValueError("noise coefficients must be >= 0")

    def level_at(self, tau_s: float) -> float:
        return (self.kappa_white * tau_s**-0.5 + self.kappa_flicker
                + self.kappa_randomwalk * tau_s**0.5)


@dataclass(frozen=True)
class BoxStats:
    """Box-plot summary: quartiles, Tukey whiskers and outliers."""

    median: float
    q1: float
    q3: float
    lower_whisker: float
    upper_whisker: float
    outliers: tuple

    def __post_init__(self):
        if not (self.lower_whisker <= self.q1 <= self.median
                <= self.q3 <= self.upper_whisker):
            raise ValueError("box statistics out of order")


def mean_std(samples) -> tuple[float, float]:
    """Exact two-pass mean and sample standard deviation (N-1 divisor)."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples for a standard deviation")
    mean = float(np.mean(x))
    std = math.sqrt(float(np.sum((x - mean) ** 2)) / (x.size - 1))
    return mean, std


def check_accuracy(samples, alpha_ns: float):
    """Whether every |offset| stays within alpha_ns; returns the worst sample.

    Empty input is vacuously within bounds.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return True, None
    worst = float(x[np.argmax(np.abs(x))])
    return bool(abs(worst) <= alpha_ns), worst


def check_precision(pair_samples, beta_ns: float) -> bool:
    """Whether every pairwise clock difference stays within beta_ns.

    With an exact reference as the second clock this reduces to the
    accuracy check on the same series.
    """
    ok, _ = check_accuracy(pair_samples, beta_ns)
    return ok


def overlapping_adev(phase_ns, tau0_s: float, taus_s) -> list[AllanPoint]:
    """Overlapping Allan deviation from phase samples (ns) at spacing tau0.

    For each tau = m * tau0:

        avar(tau) = sum_i (x[i+2m] - 2 x[i+m] + x[i])^2 / (2 (N-2m) tau^2)

    with x in seconds and i running over all N-2m overlapping triples.
    Second differences are taken on the raw nanosecond values so integer
    ramps cancel exactly.
    """
    if tau0_s <= 0:
        raise ValueError("tau0_s must be > 0")
    x = np.asarray(phase_ns, dtype=float)
    n = x.size
    points = []
    for tau in taus_s:
        m_f = tau / tau0_s
        m = int(round(m_f))
        if m < 1 or abs(m_f - m) > 1e-9:
            raise ValueError(f"tau={tau} is not a positive multiple of tau0")
        if n < 2 * m + 1:
            raise ValueError(f"series too short for tau={tau} (need {2*m+1})")
        d = x[2 * m:] - 2.0 * x[m:n - m] + x[:n - 2 * m]
        avar = float(np.sum((d * 1e-9) ** 2)) / (2.0 * (n - 2 * m) * tau * tau)
        points.append(AllanPoint(float(tau), math.sqrt(avar), n - 2 * m))
    return points


def frequency_to_phase_ns(y, tau0_s: float) -> np.ndarray:
    """Integrate fractional frequency into phase samples in nanoseconds."""
    y = np.asarray(y, dtype=float)
    phase_s = np.concatenate(([0.0], np.cumsum(y) * tau0_s))
    return phase_s * NS_PER_S


def default_taus(n: int, tau0_s: float) -> list[float]:
    """Octave-spaced averaging times usable for a series of length n."""
    taus = []
    m = 1
    while n >= 2 * m + 1:
        taus.append(m * tau0_s)
        m *= 2
    return taus


def adev_slope(points: list[AllanPoint]) -> float:
    """Log-log regression slope of an ADEV curve."""
    pts = [p for p in points if p.adev > 0]
    if len(pts) < 2:
        raise ValueError("need at least 2 nonzero points for a slope")
    lt = np.log10([p.tau_s for p in pts])
    la = np.log10([p.adev for p in pts])
    return float(np.polyfit(lt, la, 1)[0])


def fit_noise(points: list[AllanPoint]) -> NoiseFit:
    """Nonnegative least-squares fit of the three-slope noise template.

    The rows are weighted by 1/adev so the fit minimises relative error,
    which approximates a log-domain fit; the reported residual is the RMS
    of ln(model/adev) over the fitted points.
    """
    if len(points) < 3:
        raise ValueError("need at least 3 ADEV points")
    taus = np.array([p.tau_s for p in points])
    if taus.max() / taus.min() < 10.0 - 1e-9:
        raise ValueError("ADEV points must span at least one decade of tau")
    adevs = np.array([p.adev for p in points])
    mask = adevs > 0
    if not mask.any():
        raise DegenerateFitError("all ADEV points are zero")
    t, a = taus[mask], adevs[mask]
    basis = np.stack([t**mu for mu in TEMPLATE_MUS], axis=1)
    coef, _ = nnls(basis / a[:, None], np.ones(a.size))
    model = basis @ coef
    ok = model > 0
    residual = float(np.sqrt(np.mean(np.log(model[ok] / a[ok]) ** 2))) if ok.any() else math.inf
    return NoiseFit(float(coef[0]), float(coef[1]), float(coef[2]), residual)


def boxplot(samples) -> BoxStats:
    """Five-number box summary with linear-interpolation quartiles.

    Whiskers extend to the most extreme samples within 1.5 IQR of the
    quartiles; anything beyond is reported as an outlier.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 1:
        raise ValueError("need at least 1 sample")
    q1, med, q3 = (float(v) for v in np.percentile(x, [25.0, 50.0, 75.0]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    # Whiskers never retreat inside the box (interpolated quartiles may
    # exceed every non-outlier sample).
    lower = min(float(inside.min()), q1) if inside.size else q1
    upper = max(float(inside.max()), q3) if inside.size else q3
    outliers = tuple(float(v) for v in np.sort(x[(x < lo_fence) | (x > hi_fence)]))
    return BoxStats(med, q1, q3, lower, upper, outliers)


def report(offsets_ns, elapsed_s=None, tau0_s: float = 1.0) -> dict:
    """Composite JSON-ready report: moments, ADEV curve, noise fit, box."""
    x = np.asarray(offsets_ns, dtype=float)
    out: dict = {
        "n": int(x.size),
        "mean_ns": float(np.mean(x)) if x.size else 0.0,
        "std_ns": mean_std(x)[1] if x.size >= 2 else 0.0,
        "max_ns": float(np.max(x)) if x.size else 0.0,
        "min_ns": float(np.min(x)) if x.size else 0.0,
    }
    out["peak_to_peak_ns"] = out["max_ns"] - out["min_ns"]
    taus = default_taus(x.size, tau0_s)
    if taus:
        points = overlapping_adev(x, tau0_s, taus)
        out["adev"] = [[p.tau_s, p.adev] for p in points]
        try:
            fit = fit_noise(points)
            out["noise_fit"] = {
                "kappa_white": fit.kappa_white,
                "kappa_flicker": fit.kappa_flicker,
                "kappa_randomwalk": fit.kappa_randomwalk,
                "residual": fit.residual,
            }
        except (DegenerateFitError, ValueError):
            out["noise_fit"] = None
    else:
        out["adev"] = []
        out["noise_fit"] = None
    if x.size:
        box = boxplot(x)
        out["box"] = {
            "median": box.median, "q1": box.q1, "q3": box.q3,
            "lower_whisker": box.lower_whisker,
            "upper_whisker": box.upper_whisker,
            "outliers": list(box.outliers),
        }
    else:
        out["box"] = None
    return out
