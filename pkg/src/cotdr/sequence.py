"""Probe bit sequences, burst framing and transmitter waveform synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from cotdr.traces import AnalogTrace

# Maximal-length feedback taps, one polynomial per order (XAPP052 table).
# Order 7 -> x^7 + x^6 + 1, order 15 -> x^15 + x^14 + 1, ...
PRBS_TAPS: dict[int, tuple[int, ...]] = {
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 6, 4, 1),
    13: (13, 4, 3, 1),
    14: (14, 5, 3, 1),
    15: (15, 14),
    16: (16, 15, 13, 4),
    17: (17, 14),
    18: (18, 11),
    19: (19, 6, 2, 1),
    20: (20, 17),
    21: (21, 19),
    22: (22, 21),
    23: (23, 18),
    24: (24, 23, 22, 17),
    25: (25, 22),
    26: (26, 6, 2, 1),
    27: (27, 5, 2, 1),
    28: (28, 25),
    29: (29, 27),
    30: (30, 6, 4, 1),
    31: (31, 28),
}

# 10-90 % width of the unit Gaussian CDF, in standard deviations.
_RISE_10_90 = 2.0 * 1.2815515655446004


@dataclass(frozen=True)
class BitSequence:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("bits must be one-dimensional")
        if bits.size < 2:
            raise ValueError("a bit sequence needs at least 2 symbols")
        if np.any(bits > 1):
            raise ValueError("bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def length(self) -> int:
        return int(self.bits.size)

    def __len__(self) -> int:
        return self.length

    def bipolar(self) -> np.ndarray:
        """Map 0 -> -1, 1 -> +1."""
        return 2.0 * self.bits.astype(float) - 1.0


@dataclass(frozen=True)
class BurstFrame:
    """A payload burst followed by ``fill_length`` zero symbols.

    The trigger fires on the first payload bit, so ``trigger_index`` is 0.
    """

    payload: BitSequence
    fill_length: int
    bit_rate: float
    trigger_index: int = 0

    @property
    def n_symbols(self) -> int:
        return self.payload.length + self.fill_length

    @property
    def payload_duration(self) -> float:
        return self.payload.length / self.bit_rate

    @property
    def duration(self) -> float:
        return self.n_symbols / self.bit_rate

    @property
    def bit_period(self) -> float:
        return 1.0 / self.bit_rate


def generate_prbs(order: int, seed: int = 1) -> BitSequence:
    """One full period of the maximal-length LFSR sequence of the given order.

    The first ``order`` output bits are the seed bits, LSB first; later bits
    obey ``s[i] = XOR over taps t of s[i - t]``.
    """
    if order not in PRBS_TAPS:
        raise ValueError(f"PRBS order must be in [5, 31], got {order}")
    if seed == 0:
        raise ValueError("seed must be non-zero: the all-zero LFSR state is absorbing")
    if not 0 < seed < 2**order:
        raise ValueError(f"seed must lie in [1, 2**{order} - 1], got {seed}")

    taps = PRBS_TAPS[order]
    period = 2**order - 1
    s = np.empty(period + order, dtype=np.uint8)
    s[:order] = [(seed >> i) & 1 for i in range(order)]
    # Every tap reaches at least min(taps) symbols back, so blocks of that
    # size can be computed at once.
    block = min(taps)
    i = order
    while i < period:
        j = min(i + block, period)
        acc = s[i - taps[0] : j - taps[0]].copy()
        for t in taps[1:]:
            acc ^= s[i - t : j - t]
        s[i:j] = acc
        i = j
    return BitSequence(s[:period])


def build_burst(payload: BitSequence, bit_rate: float, fill_duration: float) -> BurstFrame:
    if not isinstance(payload, BitSequence):
        payload = BitSequence(payload)
    if not bit_rate > 0:
        raise ValueError("bit_rate must be positive")
    if fill_duration < 0:
        raise ValueError("fill_duration must be non-negative")
    return BurstFrame(payload, int(round(fill_duration * bit_rate)), float(bit_rate))


def symbol_index(n_samples: int, sample_rate: float, bit_rate: float) -> np.ndarray:
    """Index of the symbol in which each sample instant ``n / sample_rate`` falls."""
    n = np.arange(n_samples, dtype=float)
    return np.floor(n * bit_rate / sample_rate + 1e-9).astype(np.int64)


def synthesize_waveform(frame: BurstFrame, sample_rate: float, rise_time: float = 0.0) -> AnalogTrace:
    """NRZ intensity waveform of the whole frame, values in [0, 1].

    Edges follow a Gaussian step response whose 10-90 % rise time is
    ``rise_time``; the filter is zero-phase, so edge midpoints stay on the
    symbol boundaries.
    """
    if sample_rate < 2.0 * frame.bit_rate:
        raise ValueError(
            f"sample_rate {sample_rate:g} is below 2x the bit rate {frame.bit_rate:g}"
        )
    if rise_time < 0 or rise_time >= frame.bit_period:
        raise ValueError("rise_time must lie in [0, bit period)")

    n_samples = int(np.ceil(frame.n_symbols * sample_rate / frame.bit_rate - 1e-9))
    symbols = np.zeros(frame.n_symbols, dtype=float)
    symbols[: frame.payload.length] = frame.payload.bits
    x = symbols[np.minimum(symbol_index(n_samples, sample_rate, frame.bit_rate), frame.n_symbols - 1)]

    sigma = rise_time / _RISE_10_90
    if sigma > 0:  # a subnormal rise time can underflow to an ideal edge
        prev = np.concatenate(([0.0], symbols[:-1]))
        steps = symbols - prev
        edges = np.flatnonzero(steps)
        t_edge = edges / frame.bit_rate
        half = int(np.ceil(8.0 * sigma * sample_rate)) + 1
        centre = np.rint(t_edge * sample_rate).astype(np.int64)
        offsets = np.arange(-half, half + 1)
        idx = centre[:, None] + offsets[None, :]
        valid = (idx >= 0) & (idx < n_samples)
        t = idx / sample_rate - t_edge[:, None]
        ideal = (np.floor(idx * frame.bit_rate / sample_rate + 1e-9) >= edges[:, None]).astype(float)
        corr = steps[edges][:, None] * (ndtr(t / sigma) - ideal)
        x = x + np.bincount(idx[valid], weights=corr[valid], minlength=n_samples)

    return AnalogTrace(x, sample_rate, 0.0)
