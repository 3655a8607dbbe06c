"""Feature extraction tests against closed-form cases and the naive DFT."""

import math

import numpy as np
import pytest

from edgewatch import features as F

from oracles import naive_dft_magnitude, parseval_band_total


def _window(values):
    return F.Window(start_index=0, samples=tuple(float(v) for v in values))


def _stream(values):
    return F.samples_from_values(values)


# -- windowing ----------------------------------------------------------------

def test_window_stream_non_overlapping():
    wins = list(F.window_stream(_stream(range(10)), n=4, hop=4))
    assert len(wins) == 2
    assert wins[0].start_index == 0 and wins[0].samples == (0.0, 1.0, 2.0, 3.0)
    assert wins[1].start_index == 4 and wins[1].samples == (4.0, 5.0, 6.0, 7.0)


def test_window_stream_overlapping():
    wins = list(F.window_stream(_stream(range(10)), n=4, hop=2))
    assert len(wins) == 4
    assert [w.start_index for w in wins] == [0, 2, 4, 6]


def test_window_stream_discards_partial():
    assert list(F.window_stream(_stream(range(3)), n=4, hop=4)) == []


def test_window_stream_rejects_non_monotone():
    samples = [F.SensorSample(0, 1.0), F.SensorSample(2, 1.0), F.SensorSample(1, 1.0)]
    with pytest.raises(F.StreamError):
        list(F.window_stream(iter(samples), n=2, hop=2))


def test_window_stream_rejects_bad_config():
    with pytest.raises(F.ConfigError):
        list(F.window_stream(_stream(range(8)), n=1, hop=1))
    with pytest.raises(F.ConfigError):
        list(F.window_stream(_stream(range(8)), n=4, hop=5))


# -- DFT ------------------------------------------------------------------

def test_dft_constant_window_is_zero():
    spec = F.dft_magnitude(_window([3.25] * 8))
    assert np.allclose(spec, 0.0, atol=1e-12)


def test_dft_pure_tone_concentrates_at_its_bin():
    n = 8
    x = [math.sin(2 * math.pi * 2 * i / n) for i in range(n)]
    spec = F.dft_magnitude(_window(x))
    assert spec[2] == pytest.approx(4.0, abs=1e-9)
    for m in range(n // 2 + 1):
        if m != 2:
            assert abs(spec[m]) < 1e-9


def test_dft_matches_naive_oracle_on_random_windows():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.normal(0.0, 1.0, 64)
        impl = F.dft_magnitude(_window(x))
        oracle = naive_dft_magnitude(list(x))
        scale = max(oracle)
        assert max(abs(a - b) for a, b in zip(impl, oracle)) <= 1e-9 * scale


def test_dft_rejects_odd_window():
    with pytest.raises(F.ConfigError):
        F.dft_magnitude(_window([1.0, 2.0, 3.0]))


# -- band energies --------------------------------------------------------

def test_band_energies_direct_sum():
    assert F.band_energies([0.0, 4.0, 0.0, 0.0, 0.0], [0, 2, 5]) == (16.0, 0.0)


def test_band_energies_zero_spectrum():
    assert F.band_energies([0.0] * 5, [0, 2, 5]) == (0.0, 0.0)


def test_band_energies_malformed_edges():
    with pytest.raises(F.ConfigError):
        F.band_energies([0.0] * 5, [1, 5])
    with pytest.raises(F.ConfigError):
        F.band_energies([0.0] * 5, [0, 3, 3, 5])
    with pytest.raises(F.ConfigError):
        F.band_energies([0.0] * 5, [0, 4])


def test_parseval_identity_on_random_windows():
    rng = np.random.default_rng(11)
    n = 64
    edges = [0, 3, 8, 20, n // 2 + 1]
    for _ in range(50):
        x = rng.normal(0.0, 2.0, n)
        bands = F.band_energies(F.dft_magnitude(_window(x)), edges)
        expected = parseval_band_total(list(x))
        assert sum(bands) == pytest.approx(expected, rel=1e-6)


# -- feature vector properties ---------------------------------------------

def _demo_features(x):
    edges = [0, 4, 16, 33]
    return F.extract_features(_window(x), edges)


def test_determinism():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, 64)
    a = _demo_features(x)
    b = _demo_features(list(x))
    assert a == b


def test_scale_behavior():
    rng = np.random.default_rng(5)
    x = rng.normal(0, 1, 64)
    c = 3.7
    base = _demo_features(x)
    scaled = _demo_features(c * x)
    assert scaled.rms == pytest.approx(c * base.rms, rel=1e-9)
    for got, want in zip(scaled.band_energies, base.band_energies):
        assert got == pytest.approx(c * c * want, rel=1e-9)


def test_shift_invariance():
    rng = np.random.default_rng(6)
    x = rng.normal(0, 1, 64)
    base = _demo_features(x)
    shifted = _demo_features(x + 42.0)
    assert shifted.rms == pytest.approx(base.rms, abs=1e-9)
    for got, want in zip(shifted.band_energies, base.band_energies):
        assert got == pytest.approx(want, abs=1e-9)


def test_flat_round_trip():
    fv = F.FeatureVector(band_energies=(1.0, 2.0), rms=0.5)
    assert F.FeatureVector.from_flat(fv.as_tuple()) == fv
