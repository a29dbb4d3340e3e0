"""Receiver models: thermal noise, multi-bit digitizer and 1-bit slicer accumulation.

Two routes exist for averaged acquisitions. The generator route
(:func:`noisy_traces` + :func:`accumulate` / :func:`average_quantized`)
draws every trace explicitly. The fast route draws the per-slot result
directly from its exact distribution (binomial for the slicer) or from the
dithered-quantizer moments (multi-bit ADC), which keeps 1000-trace averages
of multi-megasample records tractable.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np
from scipy.special import ndtr

from cotdr.traces import AccumulatedTrace, AnalogTrace, QuantizedTrace


class AlignmentError(ValueError):
    """Accumulated traces do not share one trigger-aligned time grid."""


def add_noise(trace: AnalogTrace, sigma: float, rng_seed=None) -> AnalogTrace:
    """Add i.i.d. zero-mean Gaussian noise of standard deviation ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return trace.with_samples(trace.samples.copy())
    rng = np.random.default_rng(rng_seed)
    return trace.with_samples(trace.samples + sigma * rng.standard_normal(len(trace)))


def noisy_traces(clean: AnalogTrace, sigma: float, rng_seed: int, n_traces: int) -> Iterator[AnalogTrace]:
    """Trigger-aligned noisy copies of ``clean``; trace k uses its own rng stream."""
    for k in range(n_traces):
        yield add_noise(clean, sigma, np.random.SeedSequence([rng_seed, k]))


def _lsb(bits_per_sample: int, full_scale) -> tuple[float, float, float]:
    lo, hi = map(float, full_scale)
    if not lo < hi:
        raise ValueError("full scale must satisfy lo < hi")
    if bits_per_sample < 1:
        raise ValueError("bits_per_sample must be >= 1")
    return lo, hi, (hi - lo) / 2**bits_per_sample


def quantize(trace: AnalogTrace, bits_per_sample: int, full_scale) -> QuantizedTrace:
    """Uniform mid-rise quantizer with clipping.

    The code is the number of decision levels ``lo + k * lsb`` (k = 1 ..
    2**bits - 1) the sample strictly exceeds, so with one bit a sample
    above the midpoint maps to 1.
    """
    lo, _, lsb = _lsb(bits_per_sample, full_scale)
    top = 2**bits_per_sample - 1
    codes = np.clip(np.ceil((trace.samples - lo) / lsb) - 1, 0, top).astype(np.int64)
    return QuantizedTrace(codes, bits_per_sample, trace.sample_rate, trace.t0)


def dequantize(qt: QuantizedTrace, full_scale) -> AnalogTrace:
    """Map codes back to the centre of their quantization cells."""
    lo, _, lsb = _lsb(qt.bits_per_sample, full_scale)
    return AnalogTrace(lo + (qt.codes + 0.5) * lsb, qt.sample_rate, qt.t0)


def _check_aligned(ref: AnalogTrace, trace: AnalogTrace) -> None:
    if (
        len(trace) != len(ref)
        or trace.sample_rate != ref.sample_rate
        or trace.t0 != ref.t0
    ):
        raise AlignmentError("traces must share sample_rate, t0 and length")


def accumulate(run: Iterable[AnalogTrace], threshold: float, n_traces: int) -> AccumulatedTrace:
    """Count, per time slot, how many of ``n_traces`` traces exceed ``threshold``."""
    if n_traces < 1:
        raise ValueError("n_traces must be >= 1")
    sums = None
    first = None
    used = 0
    for trace in run:
        if used == n_traces:
            break
        if first is None:
            first = trace
            sums = np.zeros(len(trace), dtype=np.int64)
        else:
            _check_aligned(first, trace)
        sums += trace.samples > threshold
        used += 1
    if used < n_traces:
        raise ValueError(f"run yielded {used} traces, {n_traces} requested")
    return AccumulatedTrace(sums, n_traces, first.sample_rate, first.t0)


def accumulate_fast(
    clean: AnalogTrace, sigma: float, threshold: float, n_traces: int, rng_seed=None
) -> AccumulatedTrace:
    """Slicer accumulation drawn directly: ``sums ~ Binomial(n, Phi((s - thr) / sigma))``.

    Each slot of :func:`accumulate` over :func:`noisy_traces` is a sum of
    independent Bernoulli trials with exactly this probability.
    """
    if sigma <= 0:
        raise ValueError("the fast route needs sigma > 0")
    rng = np.random.default_rng(rng_seed)
    p = ndtr((clean.samples - threshold) / sigma)
    sums = rng.binomial(n_traces, p)
    return AccumulatedTrace(sums, n_traces, clean.sample_rate, clean.t0)


def expected_hit_fraction(signal, threshold: float, sigma: float):
    """E[sums] / n for a slicer with Gaussian noise."""
    return ndtr((np.asarray(signal, dtype=float) - threshold) / sigma)


def average_quantized(
    run: Iterable[AnalogTrace], bits_per_sample: int, full_scale, n_traces: int
) -> AnalogTrace:
    """Oscilloscope-style average of ``n_traces`` digitized traces, in signal units."""
    total = None
    first = None
    used = 0
    for trace in run:
        if used == n_traces:
            break
        if first is None:
            first = trace
            total = np.zeros(len(trace))
        else:
            _check_aligned(first, trace)
        total += quantize(trace, bits_per_sample, full_scale).codes
        used += 1
    if used < n_traces:
        raise ValueError(f"run yielded {used} traces, {n_traces} requested")
    lo, _, lsb = _lsb(bits_per_sample, full_scale)
    return AnalogTrace(lo + (total / n_traces + 0.5) * lsb, first.sample_rate, first.t0)


def average_quantized_fast(
    clean: AnalogTrace,
    sigma: float,
    bits_per_sample: int,
    full_scale,
    n_traces: int,
    rng_seed=None,
) -> AnalogTrace:
    """Moment-matched draw of :func:`average_quantized` over Gaussian-noise traces.

    With ``sigma >= lsb`` the noise dithers the quantizer: the mean of one
    dequantized sample equals the input and its variance is
    ``sigma**2 + lsb**2 / 12``, up to terms of order exp(-2 pi^2 sigma^2 / lsb^2).
    The average of ``n_traces`` such samples is drawn as a Gaussian with
    those moments. Configurations where clipping or coarse steps break the
    approximation fall back to the generator route.
    """
    lo, hi, lsb = _lsb(bits_per_sample, full_scale)
    s = clean.samples
    if sigma >= lsb and s.min() - 6 * sigma >= lo and s.max() + 6 * sigma <= hi:
        rng = np.random.default_rng(rng_seed)
        std = np.sqrt((sigma**2 + lsb**2 / 12.0) / n_traces)
        return clean.with_samples(s + std * rng.standard_normal(s.size))
    seed = int(np.random.SeedSequence(rng_seed).generate_state(1)[0])
    return average_quantized(noisy_traces(clean, sigma, seed, n_traces), bits_per_sample, full_scale, n_traces)


def auto_full_scale(clean: AnalogTrace, sigma: float, margin: float = 6.0) -> tuple[float, float]:
    return float(clean.samples.min() - margin * sigma), float(clean.samples.max() + margin * sigma)


def estimate_threshold(calibration: AnalogTrace, weakest_echo: float) -> float:
    """Slicer level halfway between the floor mean and the weakest echo's high level.

    The floor is the median of a noise-free calibration trace, which is
    dominated by echo-free time slots.
    """
    floor = float(np.median(calibration.samples))
    return floor + 0.5 * weakest_echo
