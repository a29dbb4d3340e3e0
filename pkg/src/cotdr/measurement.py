"""End-to-end C-OTDR acquisition: simulate, receive, correlate, fit, extract delays."""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from cotdr import frontend
from cotdr.correlator import cross_correlate, reference_kernel
from cotdr.fiber_channel import (
    EnvironmentState,
    FiberSpec,
    core_delays,
    echo_schedule,
    propagate,
)
from cotdr.peak_fit import PeakFitError, ReflectionPeak, detect_peaks, fit_gaussian, robust_noise_floor
from cotdr.sequence import BurstFrame, build_burst, generate_prbs, synthesize_waveform
from cotdr.timing_analysis import (
    CoreDelayRecord,
    MeasurementReport,
    SweepReport,
    compute_skew,
    extract_delay,
)
from cotdr.traces import AnalogTrace

FRONTENDS = ("analog", "adc7", "slicer1")


class EchoNotFoundError(RuntimeError):
    pass


class EchoOverlapError(ValueError):
    """Two echoes in one trace arrive too close together to be told apart."""


class PartialMeasurementError(RuntimeError):
    """A peak fit failed part-way; ``partial`` holds whatever finished before it."""

    def __init__(self, message: str, partial=None, cause: Exception | None = None):
        super().__init__(message)
        self.partial = partial
        self.cause = cause


@dataclass(frozen=True)
class AcquisitionConfig:
    prbs_order: int = 15
    prbs_seed: int = 1
    bit_rate: float = 10e9
    sample_rate: float = 50e9
    rise_time: float = 30e-12
    fill_duration: float | None = None  # s; None -> just long enough for the fiber
    frontend: str = "adc7"
    n_traces: int = 1000
    noise_sigma: float = 0.05  # per-trace thermal noise, units of peak transmitted intensity
    adc_bits: int = 7
    full_scale: tuple[float, float] | None = None  # None -> clean range +/- 6 sigma
    slicer_threshold: float | None = None  # None -> estimated from the calibration trace
    detect_threshold: float = 8.0  # multiples of the robust noise floor
    fit_half_window: int | None = None
    search_window: float = 1e-9  # s, half-width around each expected echo

    def __post_init__(self):
        if self.frontend not in FRONTENDS:
            raise ValueError(f"frontend must be one of {FRONTENDS}, got {self.frontend!r}")
        if self.n_traces < 1:
            raise ValueError("n_traces must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.frontend == "slicer1" and self.noise_sigma == 0:
            raise ValueError("the 1-bit slicer needs noise_sigma > 0 to resolve amplitude")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["full_scale"] is not None:
            d["full_scale"] = list(d["full_scale"])
        return d


@dataclass
class Acquisition:
    clean: AnalogTrace
    received: object  # AnalogTrace or AccumulatedTrace
    correlation: AnalogTrace
    truth: dict[str, float]
    peaks: dict[str, ReflectionPeak]
    peak_snr_db: dict[str, float]
    threshold: float | None = None


def auto_fill_duration(fiber: FiberSpec, envs: Sequence[EnvironmentState], payload_duration: float) -> float:
    """Shortest whole-microsecond fill after which every echo has ended."""
    last = 0.0
    for env in envs:
        delays = core_delays(fiber, env)
        # Leave room for delay jitter too.
        slack = 6.0 * fiber.delay_jitter_rms
        last = max(last, max(e.delay for e in echo_schedule(fiber, env, delays)) + 2 * slack)
    needed = last + 100e-9
    return math.ceil(needed / 1e-6) * 1e-6


@functools.lru_cache(maxsize=4)
def _probe(order: int, seed: int, bit_rate: float, fill_duration: float, sample_rate: float, rise_time: float):
    frame = build_burst(generate_prbs(order, seed), bit_rate, fill_duration)
    waveform = synthesize_waveform(frame, sample_rate, rise_time)
    kernel = reference_kernel(frame, sample_rate)
    return frame, waveform, kernel


def probe(acq: AcquisitionConfig, fill_duration: float) -> tuple[BurstFrame, AnalogTrace, AnalogTrace]:
    """Frame, transmitted waveform and correlation kernel (cached)."""
    return _probe(acq.prbs_order, acq.prbs_seed, acq.bit_rate, fill_duration, acq.sample_rate, acq.rise_time)


def _seeds(seed: int, *key: int) -> dict[str, np.random.SeedSequence]:
    ss = np.random.SeedSequence([seed, *key])
    backscatter, receiver = ss.spawn(2)
    return {"backscatter": backscatter, "receiver": receiver}


def receive(clean: AnalogTrace, acq: AcquisitionConfig, weakest_echo: float, rng_seed):
    """Averaged or accumulated receiver output for ``acq.n_traces`` triggered traces."""
    n, sigma = acq.n_traces, acq.noise_sigma
    if acq.frontend == "analog":
        # The mean of n Gaussian-noise traces is the clean trace plus N(0, sigma^2 / n).
        return frontend.add_noise(clean, sigma / math.sqrt(n), rng_seed), None
    if acq.frontend == "adc7":
        fs = acq.full_scale or frontend.auto_full_scale(clean, sigma)
        return frontend.average_quantized_fast(clean, sigma, acq.adc_bits, fs, n, rng_seed), None
    threshold = acq.slicer_threshold
    if threshold is None:
        threshold = frontend.estimate_threshold(clean, weakest_echo)
    return frontend.accumulate_fast(clean, sigma, threshold, n, rng_seed), threshold


def locate_peak(
    corr: AnalogTrace, expected_time: float, acq: AcquisitionConfig, candidates=None, window: float | None = None
) -> ReflectionPeak:
    """Fit the tallest detected peak within ``window`` (default ``acq.search_window``) of ``expected_time``."""
    window = acq.search_window if window is None else window
    centre = int(round(corr.time_to_index(expected_time)))
    half = int(math.ceil(window * corr.sample_rate))
    lo, hi = max(centre - half, 1), min(centre + half, len(corr) - 2)
    if candidates is None:
        candidates = detect_peaks(corr, acq.detect_threshold, min_separation=0.5 / acq.bit_rate)
    cand = np.asarray(candidates, dtype=np.int64)
    inside = cand[(cand >= lo) & (cand <= hi)]
    if inside.size == 0:
        raise EchoNotFoundError(f"no correlation peak within {window:g} s of {expected_time:.9g} s")
    best = int(inside[np.argmax(corr.samples[inside])])
    return fit_gaussian(corr, best, acq.fit_half_window)


def search_window(acq: AcquisitionConfig, arrivals: Sequence[float]) -> float:
    """Half-width of the association window, shrunk so neighbouring echoes never share one.

    Raises ``EchoOverlapError`` when two arrivals are closer than three bit
    periods, where their correlation peaks merge.
    """
    t = np.sort(np.asarray(arrivals, dtype=float))
    if t.size < 2:
        return acq.search_window
    gap = float(np.diff(t).min())
    if gap < 3.0 / acq.bit_rate:
        raise EchoOverlapError(
            f"echoes {gap * 1e12:.0f} ps apart cannot be resolved at {acq.bit_rate / 1e9:g} Gb/s"
        )
    return min(acq.search_window, 0.45 * gap)


def acquire(
    fiber: FiberSpec,
    env: EnvironmentState,
    acq: AcquisitionConfig,
    seed: int,
    *,
    delays: Mapping[str, float] | None = None,
    fill_duration: float | None = None,
    key: tuple[int, ...] = (),
) -> Acquisition:
    """One simultaneous acquisition of every core in ``fiber`` (at most one splitter's worth)."""
    if len(fiber.cores) > fiber.splitter_ports:
        raise ValueError(
            f"{len(fiber.cores)} cores exceed the {fiber.splitter_ports}-port splitter; measure in groups"
        )
    if delays is None:
        delays = core_delays(fiber, env)
    if fill_duration is None:
        fill_duration = acq.fill_duration
    if fill_duration is None:
        payload = (2**acq.prbs_order - 1) / acq.bit_rate
        fill_duration = auto_fill_duration(fiber, [env], payload)
    frame, waveform, kernel = probe(acq, fill_duration)
    seeds = _seeds(seed, *key)

    clean = propagate(waveform, frame, fiber, env, seeds["backscatter"], delays=delays)
    schedule = echo_schedule(fiber, env, delays)
    weakest = min(e.amplitude for e in schedule)
    received, threshold = receive(clean, acq, weakest, seeds["receiver"])
    corr = cross_correlate(received, kernel)

    # Echo identification uses the nominal (jitter-free) arrival times, the
    # way an operator knows roughly where each connector sits.
    nominal = echo_schedule(fiber, env)
    window = search_window(acq, [e.delay for e in nominal])
    candidates = detect_peaks(corr, acq.detect_threshold, min_separation=0.5 / acq.bit_rate)
    floor = robust_noise_floor(corr.samples)
    peaks, snr = {}, {}
    for echo in nominal:
        pk = locate_peak(corr, echo.delay, acq, candidates, window)
        peaks[echo.label] = pk
        snr[echo.label] = float(20 * np.log10(pk.amplitude / floor)) if floor > 0 else float("inf")
    return Acquisition(clean, received, corr, dict(delays), peaks, snr, threshold)


def records_from_acquisition(a: Acquisition, fiber: FiberSpec, temperature: float) -> dict[str, CoreDelayRecord]:
    ref = a.peaks["reference"]
    return {
        cid: CoreDelayRecord(
            cid,
            extract_delay(ref, a.peaks[cid], fiber.splitter_excess_delay),
            temperature,
            ref,
            a.peaks[cid],
        )
        for cid in fiber.core_ids
    }


def measure(
    fiber: FiberSpec,
    env: EnvironmentState,
    acq: AcquisitionConfig,
    seed: int,
    *,
    jitter: bool = True,
    fill_duration: float | None = None,
    key: tuple[int, ...] = (),
) -> MeasurementReport:
    """Measure all cores, one splitter group at a time, each group including the center core.

    Skews are formed inside each group against the center core of the same
    trace. With ``jitter`` the fiber's delay-jitter knob is drawn once for
    this temperature point and shared by all groups.
    """
    jitter_rng = np.random.default_rng(np.random.SeedSequence([seed, *key, 7])) if jitter else None
    truth = core_delays(fiber, env, jitter_rng)
    if fill_duration is None:
        fill_duration = acq.fill_duration
    if fill_duration is None:
        fill_duration = auto_fill_duration(fiber, [env], (2**acq.prbs_order - 1) / acq.bit_rate)
    records: dict[str, CoreDelayRecord] = {}
    skews: dict[str, float] = {}
    for g, group in enumerate(fiber.measurement_groups()):
        sub = fiber.select(group)
        try:
            a = acquire(
                sub, env, acq, seed,
                delays={c: truth[c] for c in group},
                fill_duration=fill_duration,
                key=(*key, g),
            )
        except PeakFitError as exc:
            done = [c for c in fiber.core_ids if c in records]
            partial = None
            if done:
                partial = MeasurementReport(
                    env.temperature,
                    fiber.center_core_id,
                    {c: records[c] for c in done},
                    {c: skews[c] for c in done},
                    {c: truth[c] for c in done},
                )
            raise PartialMeasurementError(
                f"peak fit failed for group {group} at {env.temperature:g} °C: {exc}", partial, exc
            ) from exc
        recs = records_from_acquisition(a, sub, env.temperature)
        group_skew = compute_skew(recs, fiber.center_core_id)
        for cid in group:
            if cid not in records:
                records[cid] = recs[cid]
                skews[cid] = group_skew[cid]
    ordered = {cid: records[cid] for cid in fiber.core_ids}
    return MeasurementReport(
        env.temperature,
        fiber.center_core_id,
        ordered,
        {cid: skews[cid] for cid in fiber.core_ids},
        {cid: truth[cid] for cid in fiber.core_ids},
    )


def measure_consecutive(
    fiber: FiberSpec,
    env: EnvironmentState,
    acq: AcquisitionConfig,
    seed: int,
    drift_rms: float = 0.5,
    *,
    fill_duration: float | None = None,
) -> MeasurementReport:
    """Measure one core at a time while the temperature random-walks between runs.

    Models single-core methods; the recorded temperature stays at the setpoint,
    as the operator does not see the drift. ``truth`` holds the delays at the
    actual temperatures.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    order = [fiber.center_core_id] + [c for c in fiber.core_ids if c != fiber.center_core_id]
    if fill_duration is None:
        fill_duration = acq.fill_duration
    if fill_duration is None:
        hot = EnvironmentState(min(env.temperature + 10.0, 85.0), env.reference_temperature)
        fill_duration = auto_fill_duration(fiber, [env, hot], (2**acq.prbs_order - 1) / acq.bit_rate)
    T = env.temperature
    records, truth = {}, {}
    for i, cid in enumerate(order):
        if i:
            T += drift_rms * rng.standard_normal()
        actual = replace(env, temperature=float(np.clip(T, -40.0, 85.0)))
        single = replace(fiber, cores=(fiber.core(cid),), center_core_id=cid)
        try:
            a = acquire(single, actual, acq, seed, fill_duration=fill_duration, key=(1000 + i,))
        except PeakFitError as exc:
            raise PartialMeasurementError(f"peak fit failed for core {cid}: {exc}", None, exc) from exc
        records[cid] = records_from_acquisition(a, single, env.temperature)[cid]
        truth[cid] = a.truth[cid]
    ordered = {cid: records[cid] for cid in fiber.core_ids}
    return MeasurementReport(
        env.temperature,
        fiber.center_core_id,
        ordered,
        compute_skew(ordered, fiber.center_core_id),
        {cid: truth[cid] for cid in fiber.core_ids},
    )


def temperature_sweep(
    fiber: FiberSpec,
    temperatures: Sequence[float],
    acq: AcquisitionConfig,
    seed: int,
    *,
    reference_temperature: float = 20.0,
    jitter: bool = True,
) -> SweepReport:
    """Measure every core at each temperature (instant settling) and fit TDC / skew drift."""
    envs = [EnvironmentState(float(T), reference_temperature) for T in temperatures]
    fill = acq.fill_duration
    if fill is None:
        fill = auto_fill_duration(fiber, envs, (2**acq.prbs_order - 1) / acq.bit_rate)
    reports = []
    for k, env in enumerate(envs):
        try:
            reports.append(measure(fiber, env, acq, seed, jitter=jitter, fill_duration=fill, key=(k,)))
        except PartialMeasurementError as exc:
            raise PartialMeasurementError(str(exc), reports, exc.cause) from exc
    return SweepReport.from_reports(reports)
