"""Correlation peak detection and sub-sample Gaussian timing."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from cotdr.traces import AnalogTrace

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


class PeakFitError(RuntimeError):
    """Gaussian refinement failed; ``estimate`` holds the log-parabola position (samples)."""

    def __init__(self, message: str, estimate: float | None = None):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class ReflectionPeak:
    position: float  # s
    amplitude: float
    sigma_width: float  # s
    rms_residual: float
    window: tuple[int, int]
    baseline: float = 0.0
    iterations: int = 0

    @property
    def fwhm(self) -> float:
        return FWHM_PER_SIGMA * self.sigma_width


def robust_noise_floor(y: np.ndarray) -> float:
    """Gaussian-equivalent standard deviation from the median absolute deviation."""
    med = np.median(y)
    return float(1.4826 * np.median(np.abs(y - med)))


def detect_peaks(corr: AnalogTrace, threshold: float = 8.0, min_separation: float = 1e-9) -> list[int]:
    """Local maxima higher than ``threshold`` robust noise floors above the median.

    Maxima closer than ``min_separation`` seconds are thinned greedily: the
    taller survives, ties go to the earlier sample. Plateaus report their
    first sample.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    y = corr.samples
    if y.size < 3:
        return []
    med = np.median(y)
    floor = robust_noise_floor(y)
    level = med + threshold * floor
    inner = y[1:-1]
    is_max = (inner > y[:-2]) & (inner >= y[2:]) & (inner > level)
    candidates = np.flatnonzero(is_max) + 1
    if candidates.size == 0:
        return []
    min_gap = min_separation * corr.sample_rate
    order = sorted(candidates.tolist(), key=lambda i: (-y[i], i))
    kept: list[int] = []  # sorted by index
    for i in order:
        pos = bisect.bisect_left(kept, i)
        if pos > 0 and i - kept[pos - 1] < min_gap:
            continue
        if pos < len(kept) and kept[pos] - i < min_gap:
            continue
        kept.insert(pos, i)
    return kept


def _parabola_init(y: np.ndarray, c: int) -> tuple[float, float]:
    """Vertex and width of the parabola through log(y) at c-1, c, c+1 (sample units)."""
    ym, y0, yp = y[c - 1], y[c], y[c + 1]
    if min(ym, y0, yp) <= 0:
        raise PeakFitError("log-parabola needs positive samples around the peak")
    lm, l0, lp = np.log(ym), np.log(y0), np.log(yp)
    curv = lm - 2.0 * l0 + lp
    if not curv < 0:
        raise PeakFitError("window is not peaked (non-negative log curvature)")
    offset = 0.5 * (lm - lp) / curv
    return c + offset, float(np.sqrt(-1.0 / curv))


def default_half_window(corr: AnalogTrace, center_index: int) -> int:
    """Twice the FWHM implied by the log-parabola width, at least 3 samples."""
    _, width = _parabola_init(corr.samples, center_index)
    return max(3, int(np.ceil(2.0 * FWHM_PER_SIGMA * width)))


def _gaussian(t, A, mu, s, b):
    return A * np.exp(-((t - mu) ** 2) / (2.0 * s * s)) + b


def fit_gaussian(
    corr: AnalogTrace,
    center_index: int,
    half_window: int | None = None,
    *,
    tol: float = 1e-4,
    max_iter: int = 50,
) -> ReflectionPeak:
    """Least-squares fit of ``A exp(-(t - mu)^2 / (2 s^2)) + b`` around a maximum.

    Works in sample units; ``mu`` and ``s`` are converted to seconds with the
    trace's ``sample_rate`` and ``t0``. MINPACK Levenberg-Marquardt starts from
    the log-parabola through the three top samples and stops once the scaled
    parameter step is below ``tol / 10`` relative, i.e. well under ``tol``
    samples in ``mu`` and ``s``.
    """
    y = corr.samples
    c = int(center_index)
    # Equal neighbouring maxima resolve to the earlier sample.
    while c > 0 and y[c - 1] == y[c]:
        c -= 1
    if not 1 <= c < y.size - 1:
        raise PeakFitError("peak at the trace edge")
    if half_window is None:
        half_window = default_half_window(corr, c)
    lo, hi = c - half_window, c + half_window
    if lo < 0 or hi >= y.size:
        raise PeakFitError("fit window extends beyond the trace")
    if hi - lo + 1 < 5:
        raise PeakFitError("fit window needs at least 5 samples")
    # Local coordinates keep the Jacobian well scaled far into long traces.
    t = np.arange(lo - c, hi - c + 1, dtype=float)
    w = y[lo : hi + 1]
    if w.max() > y[c]:
        raise PeakFitError("center sample is not the window maximum")

    base = float(min(w[0], w[-1]))
    mu0, s0 = _parabola_init(y - base, c)
    # Amplitude and baseline in units of the peak height keep all four
    # parameters O(1), so the relative step tolerance acts in samples.
    scale = float(y[c] - base) or 1.0

    def residual(q):
        return _gaussian(t, *q) - w / scale

    def jac(q):
        A, mu, s, _ = q
        e = np.exp(-((t - mu) ** 2) / (2 * s * s))
        return np.column_stack([e, A * e * (t - mu) / s**2, A * e * (t - mu) ** 2 / s**3, np.ones_like(t)])

    sol = optimize.least_squares(
        residual,
        [1.0, mu0 - c, s0, base / scale],
        jac=jac,
        method="lm",
        xtol=max(tol / 10.0, 1e-15),
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=4 * max_iter,
    )
    if sol.status <= 0 or sol.njev > max_iter:
        raise PeakFitError(f"no convergence in {max_iter} iterations", estimate=mu0)
    p = sol.x * [scale, 1.0, 1.0, scale]
    cost = float(sol.fun @ sol.fun) * scale**2
    it = int(sol.njev)

    A, mu, s, b = p
    mu += c
    if not lo <= mu <= hi:
        raise PeakFitError("fitted centre left the window", estimate=mu0)
    dt = 1.0 / corr.sample_rate
    return ReflectionPeak(
        position=float(corr.t0 + mu * dt),
        amplitude=float(A),
        sigma_width=float(abs(s) * dt),
        rms_residual=float(np.sqrt(cost / t.size)),
        window=(int(lo), int(hi)),
        baseline=float(b),
        iterations=it,
    )
