from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotdr.fiber_channel import (
    C_VACUUM,
    CoreSpec,
    EnvironmentState,
    FiberSpec,
    TraceOverlapError,
    core_delays,
    core_echo_amplitude,
    delay_at_temperature,
    echo_schedule,
    fractional_delay_sum,
    hex_layout,
    make_mcf,
    propagate,
)
from cotdr.sequence import BitSequence, build_burst, generate_prbs, synthesize_waveform


def _four_core(**kw):
    cores = (
        CoreSpec("c", (0, 0), 5000.0),
        CoreSpec("a", (41.1, 0), 5000.0, skew_offset=2.5e-9),
        CoreSpec("b", (-41.1, 0), 5000.0, skew_offset=-1.2e-9),
        CoreSpec("d", (0, 41.1), 5000.0, skew_offset=5e-9),
    )
    return FiberSpec(cores, "c", **kw)


def test_group_delay_5km():
    core = CoreSpec("c", (0, 0), 5000.0)
    tau = delay_at_temperature(core, EnvironmentState(20.0))
    assert tau == pytest.approx(1.468 * 5000.0 / 299792458.0, rel=1e-15)
    assert tau == pytest.approx(24.483e-6, abs=1e-9)


def test_delay_step_per_10k():
    core = CoreSpec("c", (0, 0), 5000.0, tdc=7.49)
    d = delay_at_temperature(core, EnvironmentState(30.0)) - delay_at_temperature(core, EnvironmentState(20.0))
    expected = 1.468 * 5000.0 / C_VACUUM * 7.49e-6 * 10.0
    assert d == pytest.approx(expected, rel=1e-9)
    assert d == pytest.approx(1.834e-9, abs=5e-12)


def test_skew_offset_is_additive_and_temperature_independent():
    plain = CoreSpec("a", (0, 0), 5000.0)
    skewed = CoreSpec("a", (0, 0), 5000.0, skew_offset=2.5e-9)
    for T in (10.0, 50.0):
        env = EnvironmentState(T)
        assert delay_at_temperature(skewed, env) - delay_at_temperature(plain, env) == pytest.approx(2.5e-9, abs=1e-17)


def test_core_and_fiber_validation():
    with pytest.raises(ValueError):
        CoreSpec("a", (0, 0), 0.0)
    with pytest.raises(ValueError):
        CoreSpec("a", (0, 0), 1000.0, skew_offset=11e-9)
    with pytest.raises(ValueError):
        EnvironmentState(90.0)
    with pytest.raises(ValueError):
        FiberSpec((CoreSpec("a", (0, 0), 1.0), CoreSpec("a", (1, 0), 1.0)), "a")
    with pytest.raises(ValueError):
        # The center core must be the one nearest the axis.
        FiberSpec((CoreSpec("a", (0, 0), 1.0), CoreSpec("b", (40, 0), 1.0)), "b")


def test_hex_layouts():
    seven = dict(hex_layout(7, 41.1))
    nineteen = dict(hex_layout(19, 41.1))
    assert seven["4"] == (0.0, 0.0)
    assert nineteen["10"] == (0.0, 0.0)
    radii = sorted(round(np.hypot(*p), 6) for p in nineteen.values())
    assert radii[0] == 0 and radii[1:7] == [41.1] * 6
    with pytest.raises(ValueError):
        hex_layout(12, 41.1)


def test_measurement_groups_include_center():
    fiber = make_mcf(19, 5000.0)
    groups = fiber.measurement_groups()
    assert len(groups) == 6
    assert all(g[0] == "10" and len(g) == 4 for g in groups)
    assert sorted(c for g in groups for c in g[1:]) == sorted(c for c in fiber.core_ids if c != "10")


def test_echo_schedule_spacing_and_amplitude():
    fiber = _four_core()
    env = EnvironmentState(20.0)
    sched = {e.label: e for e in echo_schedule(fiber, env)}
    assert sched["reference"].delay == 100e-9
    assert sched["reference"].amplitude == pytest.approx(10 ** -1.4)
    # Round-trip spacing is twice the one-way skew.
    assert sched["a"].delay - sched["c"].delay == pytest.approx(5e-9, abs=1e-18)
    assert sched["d"].delay - sched["b"].delay == pytest.approx(12.4e-9, abs=1e-18)
    loss = 10 ** (-0.2 * 10 / 10)
    expected = (1 - 10 ** -1.4) ** 2 / 16 * loss
    assert core_echo_amplitude(fiber, fiber.core("a")) == pytest.approx(expected)


def test_jitter_is_seeded():
    fiber = _four_core(delay_jitter_rms=5e-12)
    env = EnvironmentState(20.0)
    d1 = core_delays(fiber, env, np.random.default_rng(3))
    d2 = core_delays(fiber, env, np.random.default_rng(3))
    base = core_delays(fiber, env)
    assert d1 == d2
    assert d1 != base
    assert max(abs(d1[k] - base[k]) for k in base) < 50e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_fractional_delay_matches_bandlimited_shift(shift_samples):
    rng = np.random.default_rng(0)
    n = 256
    spec = np.zeros(n // 2 + 1, dtype=complex)
    spec[1:40] = rng.standard_normal(39) + 1j * rng.standard_normal(39)
    x = np.fft.irfft(spec, n)
    x = np.concatenate([x * np.hanning(n), np.zeros(n)])
    fs = 1.0
    delay = 50 + shift_samples
    y = fractional_delay_sum(x[:n], fs, [delay], [1.0], 2 * n)
    # Oracle: evaluate the windowed band-limited signal at shifted times via its DFT.
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size)
    ref = np.fft.irfft(X * np.exp(-2j * np.pi * f * delay), x.size)
    assert np.max(np.abs(y - ref)) < 5e-3 * np.max(np.abs(x))


def test_integer_delay_is_exact_shift():
    x = np.zeros(64)
    x[3:10] = np.arange(7.0)
    y = fractional_delay_sum(x, 1.0, [5.0], [0.5], 80)
    ref = np.zeros(80)
    ref[8:15] = 0.5 * np.arange(7.0)
    assert np.allclose(y, ref, atol=1e-12)


def _small_setup(**fiber_kw):
    fiber = FiberSpec(
        (CoreSpec("c", (0, 0), 200.0), CoreSpec("a", (40, 0), 200.0, skew_offset=1e-9)),
        "c",
        **fiber_kw,
    )
    frame = build_burst(generate_prbs(7), 10e9, 3e-6)
    wave = synthesize_waveform(frame, 50e9, 30e-12)
    return fiber, frame, wave


def test_propagate_places_echoes_at_schedule():
    fiber, frame, wave = _small_setup()
    env = EnvironmentState(20.0)
    out = propagate(wave, frame, fiber, env)
    sched = echo_schedule(fiber, env)
    for echo in sched:
        i = int(round(echo.delay * 50e9))
        # First payload bit is a 1 (seed 1): the trace rises to the echo amplitude right after arrival.
        assert out.samples[i + 2] == pytest.approx(echo.amplitude, rel=0.05)
    # Only the Nyquist-bin residue of the fractional-delay ramp precedes the first echo (< -50 dB).
    assert abs(out.samples[: int(90e-9 * 50e9)]).max() < 1e-5 * sched[0].amplitude


def test_propagate_is_linear_in_the_waveform():
    fiber, frame, wave = _small_setup()
    env = EnvironmentState(20.0)
    a = propagate(wave, frame, fiber, env)
    b = propagate(wave * 2.5, frame, fiber, env)
    assert np.allclose(b.samples, 2.5 * a.samples, atol=1e-12)


def test_backscatter_is_seeded_and_nonnegative():
    fiber, frame, wave = _small_setup(backscatter_level=0.01)
    env = EnvironmentState(20.0)
    a = propagate(wave, frame, fiber, env, rng_seed=1)
    b = propagate(wave, frame, fiber, env, rng_seed=1)
    c = propagate(wave, frame, fiber, env, rng_seed=2)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    clean = propagate(wave, frame, replace(fiber, backscatter_level=0.0), env)
    floor = a.samples - clean.samples
    assert floor.min() >= -1e-12
    assert floor.max() > 0


def test_trace_overlap_is_rejected():
    fiber = FiberSpec((CoreSpec("c", (0, 0), 5000.0),), "c")
    frame = build_burst(BitSequence([1, 0, 1, 1]), 10e9, 10e-6)
    wave = synthesize_waveform(frame, 50e9, 0.0)
    with pytest.raises(TraceOverlapError):
        propagate(wave, frame, fiber, EnvironmentState(20.0))
