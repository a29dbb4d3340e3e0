import numpy as np
import pytest
from scipy import stats

from cotdr.frontend import (
    AlignmentError,
    accumulate,
    accumulate_fast,
    add_noise,
    auto_full_scale,
    average_quantized,
    average_quantized_fast,
    dequantize,
    estimate_threshold,
    expected_hit_fraction,
    noisy_traces,
    quantize,
)
from cotdr.traces import AccumulatedTrace, AnalogTrace

FS = 50e9


def _const(value, n=400):
    return AnalogTrace(np.full(n, float(value)), FS)


def test_binomial_interval_oracle():
    lo, hi = stats.binom.ppf([0.005, 0.995], 1000, 0.5)
    assert (lo, hi) == (459, 541)


def test_slicer_at_threshold_stays_in_interval():
    # Signal exactly at threshold: each slot is Binomial(1000, 1/2).
    sums = accumulate(noisy_traces(_const(0.0, 200), 1.0, 11, 1000), 0.0, 1000).sums
    outside = np.mean((sums < 459) | (sums > 541))
    assert outside <= 0.05
    assert abs(sums.mean() - 500) < 3 * np.sqrt(250 / sums.size)


def test_hit_fraction_at_0p8416_sigma():
    assert expected_hit_fraction(0.8416, 0.0, 1.0) == pytest.approx(0.80, abs=1e-4)
    sums = accumulate(noisy_traces(_const(0.8416, 200), 1.0, 5, 1000), 0.0, 1000).sums
    assert sums.mean() / 1000 == pytest.approx(0.80, abs=0.005)


def test_fast_slicer_matches_generator_route_in_distribution():
    clean = AnalogTrace(np.linspace(-1.5, 1.5, 300), FS)
    slow = accumulate(noisy_traces(clean, 1.0, 2, 400), 0.0, 400).sums
    fast = accumulate_fast(clean, 1.0, 0.0, 400, 2).sums
    p = expected_hit_fraction(clean.samples, 0.0, 1.0)
    z_slow = (slow - 400 * p) / np.sqrt(400 * p * (1 - p))
    z_fast = (fast - 400 * p) / np.sqrt(400 * p * (1 - p))
    for z in (z_slow, z_fast):
        assert abs(z.mean()) < 0.25
        assert 0.8 < z.std() < 1.2


def test_dither_recovery_is_monotone_with_separated_intervals():
    levels = np.linspace(-1.8, 1.8, 10)
    n = 1000
    p = expected_hit_fraction(levels, 0.0, 1.0)
    assert np.all(np.diff(p) > 0)
    lo, hi = stats.binom.ppf(0.005, n, p), stats.binom.ppf(0.995, n, p)
    assert np.all(hi[:-1] < lo[1:])
    clean = AnalogTrace(np.repeat(levels, 50), FS)
    sums = accumulate_fast(clean, 1.0, 0.0, n, 9).sums.reshape(10, 50).mean(axis=1)
    assert np.all(np.diff(sums) > 0)


def test_quantizer_codes():
    t = AnalogTrace(np.array([-2.0, -1.0, -0.999, 0.0, 0.001, 0.999, 1.0, 3.0]), FS)
    q = quantize(t, 1, (-1.0, 1.0))
    assert list(q.codes) == [0, 0, 0, 0, 1, 1, 1, 1]
    q3 = quantize(t, 3, (-1.0, 1.0))
    assert list(q3.codes) == [0, 0, 0, 3, 4, 7, 7, 7]
    centers = dequantize(q3, (-1.0, 1.0)).samples
    assert centers[3] == pytest.approx(-0.125)
    assert centers[4] == pytest.approx(0.125)


def test_quantizer_error_bounded_by_half_lsb():
    x = np.random.default_rng(0).uniform(-1, 1, 5000)
    back = dequantize(quantize(AnalogTrace(x, FS), 7, (-1.0, 1.0)), (-1.0, 1.0)).samples
    assert np.max(np.abs(back - x)) <= 1.0 / 128 + 1e-12


def test_fast_adc_matches_generator_moments():
    clean = _const(0.3137, 4000)
    fs_range = (-1.0, 1.0)
    lsb = 2.0 / 128
    sigma = 2 * lsb
    slow = average_quantized(noisy_traces(clean, sigma, 4, 40), 7, fs_range, 40).samples
    fast = average_quantized_fast(clean, sigma, 7, fs_range, 40, 4).samples
    expected_std = np.sqrt((sigma**2 + lsb**2 / 12) / 40)
    for s in (slow, fast):
        assert s.mean() == pytest.approx(0.3137, abs=4 * expected_std / np.sqrt(s.size))
        assert s.std() == pytest.approx(expected_std, rel=0.06)


def test_fast_adc_falls_back_when_noise_is_below_one_lsb():
    clean = _const(0.3137, 100)
    a = average_quantized_fast(clean, 0.001, 7, (-1.0, 1.0), 20, 3)
    b = average_quantized_fast(clean, 0.001, 7, (-1.0, 1.0), 20, 3)
    assert np.array_equal(a.samples, b.samples)
    # Without dither the average sticks to one cell centre.
    assert np.ptp(a.samples) <= 2.0 / 128 + 1e-12


def test_alignment_is_enforced():
    a, b = _const(0.0, 10), _const(0.0, 11)
    with pytest.raises(AlignmentError):
        accumulate(iter([a, b]), 0.0, 2)
    with pytest.raises(ValueError):
        accumulate(iter([a]), 0.0, 2)


def test_noise_is_reproducible_and_validated():
    t = _const(0.0, 50)
    assert np.array_equal(add_noise(t, 0.1, 3).samples, add_noise(t, 0.1, 3).samples)
    with pytest.raises(ValueError):
        add_noise(t, -1.0)


def test_accumulated_trace_round_trips(tmp_path):
    acc = AccumulatedTrace(np.array([0, 5, 1000, 499]), 1000, FS, 1e-9)
    acc.to_binary(tmp_path / "a.bin")
    back = AccumulatedTrace.from_binary(tmp_path / "a.bin", 1000, FS, 1e-9)
    assert np.array_equal(back.sums, acc.sums)
    acc.to_csv(tmp_path / "a.csv")
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert rows[0] == "sample_index,sum" and rows[3] == "2,1000"
    assert list(acc.centered().samples) == [-500, -495, 500, -1]
    with pytest.raises(ValueError):
        AccumulatedTrace(np.array([1001]), 1000, FS)


def test_threshold_and_full_scale_helpers():
    clean = AnalogTrace(np.r_[np.zeros(90), np.full(10, 0.04)], FS)
    assert estimate_threshold(clean, 0.04) == pytest.approx(0.02)
    assert auto_full_scale(clean, 0.05) == pytest.approx((-0.3, 0.34))
