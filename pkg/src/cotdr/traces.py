"""Sampled trace containers shared by the simulator, receiver and correlator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AnalogTrace:
    """Real-valued waveform on a uniform time grid.

    ``t0`` is the time of the first sample relative to the burst trigger.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError("trace samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("trace contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def index_to_time(self, index):
        return self.t0 + np.asarray(index, dtype=float) / self.sample_rate

    def time_to_index(self, t):
        return (np.asarray(t, dtype=float) - self.t0) * self.sample_rate

    def with_samples(self, samples) -> "AnalogTrace":
        return AnalogTrace(samples, self.sample_rate, self.t0)

    def __mul__(self, factor: float) -> "AnalogTrace":
        return self.with_samples(self.samples * factor)

    __rmul__ = __mul__


@dataclass(frozen=True)
class QuantizedTrace:
    """Integer ADC codes in ``[0, 2**bits_per_sample - 1]``."""

    codes: np.ndarray
    bits_per_sample: int
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if self.bits_per_sample < 1:
            raise ValueError("bits_per_sample must be >= 1")
        if codes.size and (codes.min() < 0 or codes.max() > 2**self.bits_per_sample - 1):
            raise ValueError("codes outside the quantizer range")
        object.__setattr__(self, "codes", codes)

    def __len__(self) -> int:
        return self.codes.size


@dataclass(frozen=True)
class AccumulatedTrace:
    """Per-slot count of 1-bit "high" decisions over ``n_traces`` triggered traces."""

    sums: np.ndarray
    n_traces: int
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        sums = np.asarray(self.sums, dtype=np.int64)
        if self.n_traces < 1:
            raise ValueError("n_traces must be >= 1")
        if sums.size and (sums.min() < 0 or sums.max() > self.n_traces):
            raise ValueError("sums must lie in [0, n_traces]")
        object.__setattr__(self, "sums", sums)

    def __len__(self) -> int:
        return self.sums.size

    def centered(self) -> AnalogTrace:
        """Counts with the ``n_traces / 2`` pedestal removed, as an analog trace."""
        return AnalogTrace(self.sums - self.n_traces / 2.0, self.sample_rate, self.t0)

    def to_csv(self, path) -> None:
        idx = np.arange(self.sums.size)
        np.savetxt(
            path,
            np.column_stack([idx, self.sums]),
            fmt="%d",
            delimiter=",",
            header="sample_index,sum",
            comments="",
        )

    def to_binary(self, path) -> None:
        """Raw little-endian uint32 sums, one per time slot."""
        self.sums.astype("<u4").tofile(path)

    @classmethod
    def from_binary(cls, path, n_traces: int, sample_rate: float, t0: float = 0.0) -> "AccumulatedTrace":
        return cls(np.fromfile(path, dtype="<u4").astype(np.int64), n_traces, sample_rate, t0)
