"""Pulse compression: correlate received traces with the transmitted bit pattern."""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from cotdr.sequence import BurstFrame, symbol_index
from cotdr.traces import AccumulatedTrace, AnalogTrace


def reference_kernel(frame: BurstFrame, sample_rate: float) -> AnalogTrace:
    """Bipolar (+/-1) payload sampled on the receive grid, mean removed.

    The fill pattern is excluded. Sample n maps to payload bit
    ``floor(n * bit_rate / sample_rate)``, the same rule the transmitter uses.
    """
    n_bits = frame.payload.length
    if n_bits == 0:
        raise ValueError("empty payload")
    n = int(np.ceil(n_bits * sample_rate / frame.bit_rate - 1e-9))
    idx = np.minimum(symbol_index(n, sample_rate, frame.bit_rate), n_bits - 1)
    kernel = frame.payload.bipolar()[idx]
    return AnalogTrace(kernel - kernel.mean(), sample_rate, 0.0)


def _as_analog(trace) -> AnalogTrace:
    if isinstance(trace, AccumulatedTrace):
        return trace.centered()
    return trace


def cross_correlate(trace, kernel: AnalogTrace) -> AnalogTrace:
    """Full linear cross-correlation ``c[k] = sum_j x[k + j] * h[j]`` via FFT.

    Lags run from ``-(M - 1)`` to ``N - 1``; the output ``t0`` is chosen so
    an echo whose payload starts at time ``t`` peaks at time ``t``. No
    normalization: an aligned unit-amplitude copy of the kernel peaks at
    ``sum(h**2)``. Accumulated 1-bit traces are centred on ``n_traces / 2``
    first.
    """
    x = _as_analog(trace)
    if x.sample_rate != kernel.sample_rate:
        raise ValueError("trace and kernel sample rates differ")
    n, m = len(x), len(kernel)
    if m > n:
        raise ValueError(f"kernel ({m} samples) longer than trace ({n} samples)")
    nfft = sfft.next_fast_len(n + m - 1, real=True)
    X = sfft.rfft(x.samples, nfft)
    H = sfft.rfft(kernel.samples, nfft)
    circ = sfft.irfft(X * np.conj(H), nfft)
    # Negative lags wrap to the end of the circular result.
    full = np.concatenate([circ[nfft - (m - 1) :], circ[:n]]) if m > 1 else circ[:n]
    t0 = x.t0 - kernel.t0 - (m - 1) / x.sample_rate
    return AnalogTrace(full, x.sample_rate, t0)


def cross_correlate_direct(trace, kernel: AnalogTrace) -> AnalogTrace:
    """O(N M) reference implementation of :func:`cross_correlate`."""
    x = _as_analog(trace)
    if len(kernel) > len(x):
        raise ValueError("kernel longer than trace")
    full = np.correlate(x.samples, kernel.samples, mode="full")
    t0 = x.t0 - kernel.t0 - (len(kernel) - 1) / x.sample_rate
    return AnalogTrace(full, x.sample_rate, t0)


def peak_fwhm(corr: AnalogTrace, index: int | None = None) -> float:
    """Full width at half maximum of the peak at ``index`` (default: global max), seconds.

    Half-maximum crossings are located by linear interpolation between samples.
    """
    y = corr.samples
    i = int(np.argmax(y)) if index is None else int(index)
    half = 0.5 * y[i]
    left = i
    while left > 0 and y[left - 1] > half:
        left -= 1
    right = i
    while right < y.size - 1 and y[right + 1] > half:
        right += 1
    if left == 0 or right == y.size - 1:
        raise ValueError("peak does not fall below half maximum inside the trace")
    x_left = left - (y[left] - half) / (y[left] - y[left - 1])
    x_right = right + (y[right] - half) / (y[right] - y[right + 1])
    return (x_right - x_left) / corr.sample_rate


def peak_fwhm_samples(corr: AnalogTrace, index: int | None = None) -> int:
    """Number of samples at or above half of the peak value."""
    y = corr.samples
    i = int(np.argmax(y)) if index is None else int(index)
    left = i
    while left > 0 and y[left - 1] >= 0.5 * y[i]:
        left -= 1
    right = i
    while right < y.size - 1 and y[right + 1] >= 0.5 * y[i]:
        right += 1
    return right - left + 1


def sidelobe_ratio(corr: AnalogTrace, peak_index: int, exclude: int) -> float:
    """Peak value over RMS of the trace outside ``peak_index +/- exclude``."""
    y = corr.samples
    mask = np.ones(y.size, dtype=bool)
    mask[max(peak_index - exclude, 0) : peak_index + exclude + 1] = False
    return float(y[peak_index] / np.sqrt(np.mean(y[mask] ** 2)))
