"""Quick closed-form checks of the simulator, run by ``cotdr selftest``."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import stats

from cotdr.correlator import cross_correlate, cross_correlate_direct, peak_fwhm_samples, reference_kernel
from cotdr.fiber_channel import C_VACUUM, CoreSpec, EnvironmentState, delay_at_temperature
from cotdr.frontend import accumulate_fast, expected_hit_fraction
from cotdr.peak_fit import fit_gaussian
from cotdr.pmd_mps import (
    BirefringentSegment,
    CorePolarizationModel,
    dgd_derivative_oracle,
    dgd_jme,
)
from cotdr.sequence import build_burst, generate_prbs, synthesize_waveform
from cotdr.timing_analysis import fit_tdc
from cotdr.traces import AnalogTrace


def _prbs_balance():
    bits = generate_prbs(7).bits
    return bits.size == 127 and int(bits.sum()) == 64, f"{int(bits.sum())} ones in {bits.size}"


def _delay_5km():
    tau = delay_at_temperature(CoreSpec("c", (0, 0), 5000.0), EnvironmentState(20.0))
    expected = 1.468 * 5000.0 / C_VACUUM
    return abs(tau - expected) < 1e-18 and abs(tau - 24.483e-6) < 1e-9, f"{tau * 1e6:.6f} us"


def _tdc_shift():
    core = CoreSpec("c", (0, 0), 5000.0)
    d = delay_at_temperature(core, EnvironmentState(30.0)) - delay_at_temperature(core, EnvironmentState(20.0))
    return abs(d - 1.834e-9) < 0.001e-9, f"{d * 1e9:.4f} ns per 10 K"


def _tdc_recovery():
    core = CoreSpec("c", (0, 0), 5000.0)
    temps = [10.0, 20.0, 30.0, 40.0, 50.0]
    fit = fit_tdc([(T, delay_at_temperature(core, EnvironmentState(T))) for T in temps])
    expected = 7.49 / (1 + 7.49e-6 * (10.0 - 20.0))
    return abs(fit.slope_ppm_per_k - expected) < 1e-6, f"{fit.slope_ppm_per_k:.6f} ppm/K"


def _binomial_ci():
    lo, hi = stats.binom.ppf([0.005, 0.995], 1000, 0.5)
    return (int(lo), int(hi)) == (459, 541), f"[{int(lo)}, {int(hi)}]"


def _slicer_probability():
    p = expected_hit_fraction(np.array([0.8416]), 0.0, 1.0)[0]
    clean = AnalogTrace(np.full(200, 0.8416), 50e9)
    frac = accumulate_fast(clean, 1.0, 0.0, 1000, 3).sums.mean() / 1000
    return abs(p - 0.80) < 1e-4 and abs(frac - 0.80) < 0.01, f"p={p:.5f}, measured {frac:.4f}"


def _correlator_fft():
    rng = np.random.default_rng(5)
    x = AnalogTrace(rng.standard_normal(3000), 50e9)
    h = AnalogTrace(rng.standard_normal(400), 50e9)
    err = np.max(np.abs(cross_correlate(x, h).samples - cross_correlate_direct(x, h).samples))
    return err < 1e-9, f"max |fft - direct| = {err:.2e}"


def _nrz_fwhm():
    frame = build_burst(generate_prbs(7), 10e9, 100e-9)
    wave = synthesize_waveform(frame, 50e9, 0.0)
    corr = cross_correlate(wave, reference_kernel(frame, 50e9))
    n = peak_fwhm_samples(corr)
    return n == 5, f"{n} samples = {n * 20} ps"


def _subsample_shift():
    t = np.arange(-40, 41, dtype=float)
    base = np.maximum(0.0, 1.0 - np.abs(t) / 5.0)
    moved = np.maximum(0.0, 1.0 - np.abs(t - 0.25) / 5.0)
    p0 = fit_gaussian(AnalogTrace(base, 50e9), 40).position
    p1 = fit_gaussian(AnalogTrace(moved, 50e9), 40).position
    shift = (p1 - p0) * 1e12
    return abs(shift - 5.0) <= 2.0, f"{shift:.3f} ps for +0.25 sample"


def _pmd_two_segment():
    tau = 1e-12
    model = CorePolarizationModel(
        (BirefringentSegment(tau, 0.0, 0.0), BirefringentSegment(tau, math.pi / 4, 0.0))
    )
    wl = np.linspace(1.50e-6, 1.60e-6, 7)
    jme = dgd_jme(model, wl)
    oracle = np.array([dgd_derivative_oracle(model, w) for w in wl])
    ok = np.allclose(jme, math.sqrt(2) * tau, rtol=1e-4) and np.allclose(oracle, jme, rtol=1e-4)
    return ok, f"{jme.mean() * 1e12:.6f} ps (sqrt 2 = {math.sqrt(2):.6f})"


CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("prbs7 balance", _prbs_balance),
    ("5 km group delay", _delay_5km),
    ("+10 K delay shift", _tdc_shift),
    ("TDC fit recovery", _tdc_recovery),
    ("binomial 99% interval", _binomial_ci),
    ("slicer hit probability", _slicer_probability),
    ("FFT vs direct correlation", _correlator_fft),
    ("ideal NRZ peak width", _nrz_fwhm),
    ("sub-sample peak shift", _subsample_shift),
    ("two-segment DGD", _pmd_two_segment),
]


def run() -> list[tuple[str, bool, str]]:
    results = []
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failed check, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
