"""Ground-truth simulator of the multi-core fiber echo path.

Optical path: circulator -> partial reference reflector -> 1xN splitter ->
cores -> end reflectors, and back. All amplitudes are in detected-power
units: an echo of power ratio ``r`` scales the transmitted intensity
waveform by ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import fft as sfft

from cotdr.pmd_mps import BirefringenceSpec
from cotdr.sequence import BurstFrame
from cotdr.traces import AnalogTrace

C_VACUUM = 299792458.0  # m/s, exact

# Sanity bound on injected skew: 10 ns per km of core length.
MAX_SKEW_PER_METER = 10e-9 / 1000.0


class TraceOverlapError(ValueError):
    """The burst period is too short: echoes would spill into the next frame."""


@dataclass(frozen=True)
class CoreSpec:
    core_id: str
    position: tuple[float, float]  # µm from the cladding axis
    length: float  # m
    group_index: float = 1.468
    skew_offset: float = 0.0  # s, one-way, added to the geometric delay
    tdc: float = 7.49  # ppm/K
    end_reflectance: float = 1.0
    birefringence: BirefringenceSpec | None = None

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"core {self.core_id}: length must be positive")
        if self.group_index <= 0:
            raise ValueError(f"core {self.core_id}: group_index must be positive")
        if not 0 < self.end_reflectance <= 1:
            raise ValueError(f"core {self.core_id}: end_reflectance must lie in (0, 1]")
        if abs(self.skew_offset) >= MAX_SKEW_PER_METER * self.length:
            raise ValueError(
                f"core {self.core_id}: |skew_offset| {self.skew_offset:g} s exceeds 10 ns/km"
            )
        object.__setattr__(self, "core_id", str(self.core_id))
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))

    @property
    def base_delay(self) -> float:
        """One-way geometric group delay ``n_g * L / c``."""
        return self.group_index * self.length / C_VACUUM

    @property
    def radius(self) -> float:
        return float(np.hypot(*self.position))


@dataclass(frozen=True)
class FiberSpec:
    cores: tuple[CoreSpec, ...]
    center_core_id: str
    reference_reflector_delay: float = 100e-9  # s, round trip
    reference_reflectance: float = 10 ** (-14 / 10)
    splitter_excess_delay: float = 0.0  # s, one-way per branch
    backscatter_level: float = 0.0
    attenuation_db_per_km: float = 0.2
    splitter_ports: int = 4
    delay_jitter_rms: float = 0.0  # s, per-core random delay per temperature point
    name: str = ""

    def __post_init__(self):
        cores = tuple(self.cores)
        object.__setattr__(self, "cores", cores)
        object.__setattr__(self, "center_core_id", str(self.center_core_id))
        if not cores:
            raise ValueError("a fiber needs at least one core")
        ids = [c.core_id for c in cores]
        if len(set(ids)) != len(ids):
            raise ValueError("core ids must be unique")
        if self.center_core_id not in ids:
            raise ValueError(f"center core {self.center_core_id!r} is not among the cores")
        radii = {c.core_id: c.radius for c in cores}
        if radii[self.center_core_id] > min(radii.values()) + 1e-9:
            raise ValueError(
                f"center core {self.center_core_id!r} is not the core nearest the cladding axis"
            )
        if not 0 < self.reference_reflectance < 1:
            raise ValueError("reference_reflectance must lie in (0, 1)")
        if self.reference_reflector_delay < 0 or self.splitter_excess_delay < 0:
            raise ValueError("delays must be non-negative")
        if self.backscatter_level < 0 or self.delay_jitter_rms < 0:
            raise ValueError("backscatter_level and delay_jitter_rms must be non-negative")
        if self.splitter_ports < 1:
            raise ValueError("splitter_ports must be >= 1")

    def core(self, core_id: str) -> CoreSpec:
        for c in self.cores:
            if c.core_id == str(core_id):
                return c
        raise KeyError(core_id)

    @property
    def core_ids(self) -> list[str]:
        return [c.core_id for c in self.cores]

    def select(self, core_ids: Sequence[str]) -> "FiberSpec":
        """Sub-fiber holding only ``core_ids`` (must include the center core)."""
        wanted = [str(c) for c in core_ids]
        return replace(self, cores=tuple(self.core(c) for c in wanted))

    def measurement_groups(self) -> list[list[str]]:
        """Split the cores into splitter-sized groups, each containing the center core."""
        others = [c for c in self.core_ids if c != self.center_core_id]
        per_group = max(self.splitter_ports - 1, 1)
        if not others:
            return [[self.center_core_id]]
        return [
            [self.center_core_id] + others[i : i + per_group]
            for i in range(0, len(others), per_group)
        ]


@dataclass(frozen=True)
class EnvironmentState:
    temperature: float = 20.0  # °C
    reference_temperature: float = 20.0  # °C

    def __post_init__(self):
        for name in ("temperature", "reference_temperature"):
            value = getattr(self, name)
            if not -40.0 <= value <= 85.0:
                raise ValueError(f"{name} {value} °C outside the model range [-40, 85]")


@dataclass(frozen=True)
class Echo:
    label: str
    delay: float  # round-trip arrival time relative to the trigger, s
    amplitude: float  # power ratio


def delay_at_temperature(core: CoreSpec, env: EnvironmentState) -> float:
    """One-way group delay of ``core`` at the environment temperature."""
    dT = env.temperature - env.reference_temperature
    return core.base_delay * (1.0 + core.tdc * 1e-6 * dT) + core.skew_offset


def core_delays(
    fiber: FiberSpec,
    env: EnvironmentState,
    jitter_rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Ground-truth one-way delay per core, optionally with random delay jitter."""
    delays = {c.core_id: delay_at_temperature(c, env) for c in fiber.cores}
    if jitter_rng is not None and fiber.delay_jitter_rms > 0:
        for cid in fiber.core_ids:
            delays[cid] += fiber.delay_jitter_rms * jitter_rng.standard_normal()
    return delays


def core_echo_amplitude(fiber: FiberSpec, core: CoreSpec) -> float:
    split = 1.0 / fiber.splitter_ports
    transmission = (1.0 - fiber.reference_reflectance) ** 2
    loss = 10 ** (-fiber.attenuation_db_per_km * 2.0 * core.length / 1000.0 / 10.0)
    return transmission * split**2 * core.end_reflectance * loss


def echo_schedule(
    fiber: FiberSpec,
    env: EnvironmentState,
    delays: Mapping[str, float] | None = None,
) -> list[Echo]:
    """Reference echo followed by one end echo per core."""
    if delays is None:
        delays = core_delays(fiber, env)
    echoes = [Echo("reference", fiber.reference_reflector_delay, fiber.reference_reflectance)]
    for core in fiber.cores:
        arrival = fiber.reference_reflector_delay + 2.0 * (
            fiber.splitter_excess_delay + delays[core.core_id]
        )
        echoes.append(Echo(core.core_id, arrival, core_echo_amplitude(fiber, core)))
    return echoes


def fractional_delay_sum(
    source: np.ndarray,
    sample_rate: float,
    delays: Sequence[float],
    gains: Sequence[float],
    n_out: int,
) -> np.ndarray:
    """``sum_k gains[k] * source(t - delays[k])`` via a band-limited phase ramp."""
    nfft = sfft.next_fast_len(n_out + source.size + 16, real=True)
    spectrum = sfft.rfft(source, nfft)
    f = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    transfer = np.zeros(f.size, dtype=complex)
    for delay, gain in zip(delays, gains):
        ramp = np.exp(-2j * np.pi * f * delay)
        if nfft % 2 == 0:
            # The Nyquist bin of a real signal must stay real.
            ramp[-1] = ramp[-1].real
        transfer += gain * ramp
    return sfft.irfft(spectrum * transfer, nfft)[:n_out]


def backscatter_floor(
    n_samples: int,
    sample_rate: float,
    fiber: FiberSpec,
    delays: Mapping[str, float],
    burst_duration: float,
    mean_power: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Speckled Rayleigh pedestal, one exponentially decaying stretch per core.

    Per-sample intensity is |E|^2 of a unit circular-Gaussian field, scaled by
    the round-trip attenuation envelope and by the fraction of the burst that
    is inside the core at that instant.
    """
    floor = np.zeros(n_samples)
    if fiber.backscatter_level == 0 or mean_power == 0:
        return floor
    split = 1.0 / fiber.splitter_ports
    scale = fiber.backscatter_level * (1.0 - fiber.reference_reflectance) ** 2 * split**2 * mean_power
    for core in fiber.cores:
        tau = delays[core.core_id]
        t_enter = fiber.reference_reflector_delay + 2.0 * fiber.splitter_excess_delay
        t_end = t_enter + 2.0 * tau
        i0 = max(int(np.floor(t_enter * sample_rate)), 0)
        i1 = min(int(np.ceil((t_end + burst_duration) * sample_rate)) + 1, n_samples)
        if i1 <= i0:
            continue
        t = np.arange(i0, i1) / sample_rate
        coverage = np.clip(
            (np.minimum(t, t_end) - np.maximum(t - burst_duration, t_enter)) / burst_duration, 0.0, 1.0
        )
        one_way = np.clip((t - 0.5 * burst_duration - t_enter) / 2.0, 0.0, tau)
        z_km = one_way / tau * core.length / 1000.0
        envelope = 10 ** (-fiber.attenuation_db_per_km * 2.0 * z_km / 10.0)
        field = rng.standard_normal((2, i1 - i0)) * np.sqrt(0.5)
        speckle = field[0] ** 2 + field[1] ** 2
        floor[i0:i1] += scale * envelope * coverage * speckle
    return floor


def propagate(
    waveform: AnalogTrace,
    frame: BurstFrame,
    fiber: FiberSpec,
    env: EnvironmentState,
    rng_seed: int = 0,
    *,
    delays: Mapping[str, float] | None = None,
) -> AnalogTrace:
    """Noise-free received intensity over one burst period.

    ``delays`` overrides the per-core one-way delays (used to inject jitter);
    by default they come from :func:`delay_at_temperature`. The output has
    the same length and time origin as ``waveform``. Raises
    :class:`TraceOverlapError` when the last echo would not have ended
    before the next burst starts.
    """
    if delays is None:
        delays = core_delays(fiber, env)
    echoes = echo_schedule(fiber, env, delays)
    last_arrival = max(e.delay for e in echoes)
    if frame.duration < last_arrival + frame.payload_duration:
        raise TraceOverlapError(
            f"frame duration {frame.duration:.4g} s is shorter than the last echo "
            f"arrival {last_arrival:.4g} s plus the burst length {frame.payload_duration:.4g} s"
        )

    fs = waveform.sample_rate
    n_out = len(waveform)
    # Only the payload part of the frame is non-zero; keep a guard for edge tails.
    n_payload = max(int(np.ceil(frame.payload_duration * fs)), 1)
    n_src = min(n_out, n_payload + 64)
    source = waveform.samples[:n_src]
    out = fractional_delay_sum(
        source, fs, [e.delay for e in echoes], [e.amplitude for e in echoes], n_out
    )
    rng = np.random.default_rng(rng_seed)
    mean_power = float(waveform.samples[:n_payload].mean())
    out += backscatter_floor(n_out, fs, fiber, delays, frame.payload_duration, mean_power, rng)
    return AnalogTrace(out, fs, waveform.t0)


def hex_layout(n_cores: int, pitch: float) -> list[tuple[str, tuple[float, float]]]:
    """Hexagonal 7- or 19-core layout, ids numbered row by row from the top.

    The center core gets id "4" for 7 cores and "10" for 19 cores.
    """
    if n_cores == 7:
        rings = 1
    elif n_cores == 19:
        rings = 2
    else:
        raise ValueError("hex layouts exist for 7 and 19 cores")
    points = []
    for q in range(-rings, rings + 1):
        for r in range(-rings, rings + 1):
            s = -q - r
            if max(abs(q), abs(r), abs(s)) <= rings:
                x = pitch * (q + r / 2.0)
                y = pitch * (np.sqrt(3.0) / 2.0) * r
                points.append((round(x, 6), round(y, 6)))
    points.sort(key=lambda p: (-p[1], p[0]))
    return [(str(i + 1), (x + 0.0, y + 0.0)) for i, (x, y) in enumerate(points)]


def make_mcf(
    n_cores: int,
    length: float,
    skews: Mapping[str, float] | None = None,
    *,
    pitch: float = 41.1,
    group_index: float = 1.468,
    tdc: float | Mapping[str, float] = 7.49,
    end_reflectance: float = 1.0,
    birefringence: Mapping[str, BirefringenceSpec] | None = None,
    **fiber_kwargs,
) -> FiberSpec:
    """Multi-core fiber on a hexagonal grid with injected per-core skews."""
    skews = {str(k): v for k, v in (skews or {}).items()}
    birefringence = {str(k): v for k, v in (birefringence or {}).items()}
    cores = []
    for cid, pos in hex_layout(n_cores, pitch):
        core_tdc = tdc[cid] if isinstance(tdc, Mapping) else tdc
        cores.append(
            CoreSpec(
                core_id=cid,
                position=pos,
                length=length,
                group_index=group_index,
                skew_offset=skews.get(cid, 0.0),
                tdc=core_tdc,
                end_reflectance=end_reflectance,
                birefringence=birefringence.get(cid),
            )
        )
    center = min(cores, key=lambda c: c.radius).core_id
    return FiberSpec(cores=tuple(cores), center_core_id=center, **fiber_kwargs)
