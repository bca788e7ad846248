import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal as sps

from conftest import tone
from vauth.errors import AlignmentFailed, DegenerateSignal, EnvelopeMismatch, InvalidCutoff
from vauth.signal_core import (DIRECT_XCORR_MAX, CrossCorrelation, EnergyEnvelope, SampledSignal,
                               align, apply_envelope, clip_spikes, design_highpass, energy_envelope,
                               highpass_filter, normalize_unity, resample, xcorr_normalized)

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


def sig(x, rate=8000.0):
    return SampledSignal(np.asarray(x, dtype=float), rate)


def amplitude_at(x, rate, freq):
    """Single-bin DFT amplitude of a windowed tone."""
    w = np.hanning(x.shape[0])
    t = np.arange(x.shape[0]) / rate
    return 2 * abs(np.sum(x * w * np.exp(-2j * np.pi * freq * t))) / w.sum()


class TestSampledSignal:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            sig([0.0, np.nan])

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            sig([0.0], rate=0)

    def test_immutable(self):
        s = sig([1.0, 2.0])
        with pytest.raises(ValueError):
            s.samples[0] = 3.0


class TestHighpass:
    def test_dc_removed(self):
        y = highpass_filter(sig(np.ones(8000)), 100.0)
        ntaps = design_highpass(100.0, 8000.0).shape[0]
        core = y.samples[ntaps:-ntaps]
        assert np.sqrt(np.mean(core**2)) < 0.01

    def test_passband_200hz(self):
        x = tone(200, 1.0)
        y = highpass_filter(x, 100.0)
        # frequency-response oracle from the designed taps
        _, h = sps.freqz(design_highpass(100.0, 8000.0), worN=[200.0], fs=8000.0)
        assert abs(h[0]) >= 0.9
        mid = slice(2000, 6000)
        ratio = np.std(y.samples[mid]) / np.std(x.samples[mid])
        assert ratio == pytest.approx(abs(h[0]), abs=0.01)

    def test_stopband_50hz(self):
        _, h = sps.freqz(design_highpass(100.0, 8000.0), worN=[50.0], fs=8000.0)
        assert 20 * np.log10(abs(h[0])) <= -20
        y = highpass_filter(tone(50, 2.0), 100.0)
        mid = y.samples[4000:12000]
        assert 20 * np.log10(np.std(mid) / np.sqrt(0.5)) <= -20

    def test_length_preserved(self):
        assert len(highpass_filter(sig(np.random.default_rng(0).standard_normal(777)), 100)) == 777

    @pytest.mark.parametrize("cutoff", [4000.0, 5000.0, 0.0, -1.0])
    def test_invalid_cutoff(self, cutoff):
        with pytest.raises(InvalidCutoff):
            highpass_filter(sig(np.zeros(100)), cutoff)


class TestResample:
    def test_length(self):
        y = resample(sig(np.zeros(64000), 64000.0), 8000.0)
        assert abs(len(y) - 8000) <= 1 and y.rate_hz == 8000.0

    def test_anti_alias(self):
        rate = 44100.0
        t = np.arange(int(rate)) / rate
        x = np.sin(2 * np.pi * 1000 * t) + np.sin(2 * np.pi * 5000 * t)
        y = resample(sig(x, rate), 8000.0)
        assert amplitude_at(y.samples, 8000.0, 1000.0) >= 0.9
        # 5 kHz folds to 3 kHz at 8 kHz
        assert 20 * np.log10(amplitude_at(y.samples, 8000.0, 3000.0)) <= -30

    def test_identity(self):
        x = np.random.default_rng(1).standard_normal(500)
        np.testing.assert_allclose(resample(sig(x), 8000.0).samples, x, atol=1e-9)

    def test_round_trip_band_limited(self):
        rng = np.random.default_rng(2)
        x = sps.sosfiltfilt(sps.butter(8, 2500, fs=16000, output="sos"), rng.standard_normal(16000))
        back = resample(resample(sig(x, 16000.0), 8000.0), 16000.0).samples
        mid = slice(500, -500)
        resid = np.sum((back[mid] - x[mid]) ** 2) / np.sum(x[mid] ** 2)
        assert 10 * np.log10(resid) <= -30


class TestClipSpikes:
    def test_isolated_spike(self):
        x = np.zeros(4000)
        x[2000] = 100.0
        y = clip_spikes(sig(x), 4000).samples
        assert abs(y[2000]) < 100.0
        assert np.all(np.delete(y, 2000) == 0)

    def test_quiet_noise_untouched(self):
        window, checked = 200, 0
        for seed in range(20):
            x = 0.1 * np.random.default_rng(seed).standard_normal(1000)
            e = x * x
            # brute-force leave-one-out running stats; only assert when no sample is an outlier
            ok = True
            for i in range(1000):
                nb = np.delete(e[max(0, i - 100):i + 101], min(i, 100))
                ok &= e[i] <= nb.mean() + 6 * nb.std()
            if ok:
                checked += 1
                np.testing.assert_array_equal(clip_spikes(sig(x), window).samples, x)
        assert checked > 0
        # bounded noise: max energy 0.25 < mean + 6 std = 0.53 always
        x = np.random.default_rng(3).uniform(-0.5, 0.5, 4000)
        np.testing.assert_array_equal(clip_spikes(sig(x), 4000).samples, x)

    def test_transient_then_speech(self):
        # one large transient followed by quieter voiced material
        rate = 8000.0
        speech = 0.05 * tone(150, 0.5, rate).samples * np.hanning(4000)
        x = np.concatenate([np.zeros(1000), speech, np.zeros(1000)])
        x[500:503] = [2.0, -3.0, 2.5]
        y = normalize_unity(clip_spikes(sig(x, rate), 4000)).samples
        assert np.max(np.abs(y[1000:5000])) >= 0.5

    @given(arrays(np.float64, st.integers(8, 400), elements=finite))
    @settings(max_examples=60, deadline=None)
    def test_energy_never_increases(self, x):
        y = clip_spikes(sig(x), 16).samples
        assert np.dot(y, y) <= np.dot(x, x) + 1e-12
        assert np.all(np.abs(y) <= np.abs(x) + 1e-15)

    def test_window_too_small(self):
        with pytest.raises(ValueError):
            clip_spikes(sig(np.zeros(10)), 4)


class TestNormalize:
    def test_examples(self):
        np.testing.assert_allclose(normalize_unity(sig([0.5, -0.25, 0.1])).samples, [1.0, -0.5, 0.2])
        np.testing.assert_allclose(normalize_unity(sig([-3.0, 1.0])).samples, [-1.0, 1 / 3])

    def test_zero(self):
        with pytest.raises(DegenerateSignal):
            normalize_unity(sig(np.zeros(5)))

    @given(arrays(np.float64, st.integers(1, 200), elements=finite).filter(lambda a: np.any(a != 0)))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, x):
        once = normalize_unity(sig(x))
        np.testing.assert_allclose(normalize_unity(once).samples, once.samples, rtol=0, atol=1e-15)
        assert np.max(np.abs(once.samples)) == pytest.approx(1.0)


class TestAlign:
    def test_delay_100(self):
        x = np.random.default_rng(4).standard_normal(2000)
        g = np.concatenate([np.zeros(100), x])
        shift, fa, ga = align(sig(x), sig(g))
        assert shift == 100
        assert len(fa) == len(ga)
        np.testing.assert_array_equal(fa.samples, ga.samples)

    def test_identity(self):
        x = np.random.default_rng(5).standard_normal(500)
        assert align(sig(x), sig(x))[0] == 0

    def test_embedded_chirp(self):
        rng = np.random.default_rng(6)
        t = np.arange(800) / 8000.0
        ch = sps.chirp(t, 200, t[-1], 3000)
        f = 0.3 * rng.standard_normal(6000)
        g = 0.3 * rng.standard_normal(6000)
        f[1000:1800] += ch
        g[1250:2050] += ch
        # brute-force oracle over every lag
        lags = np.arange(-5999, 6000)
        brute = [np.dot(f[max(0, -k):6000 - max(0, k)], g[max(0, k):6000 - max(0, -k)]) for k in lags]
        expected = int(lags[np.argmax(np.abs(brute))])
        assert expected == 250
        assert align(sig(f), sig(g))[0] == expected

    def test_max_lag_bound(self):
        x = np.random.default_rng(7).standard_normal(3000)
        g = np.concatenate([np.zeros(400), x])
        assert align(sig(x), sig(g))[0] == 400
        shift = align(sig(x), sig(g), max_lag=100)[0]
        assert abs(shift) <= 100
        assert align(sig(x), sig(g), max_lag=400)[0] == 400
        with pytest.raises(ValueError):
            align(sig(x), sig(g), max_lag=-1)

    def test_empty(self):
        with pytest.raises(AlignmentFailed):
            align(sig([]), sig([1.0]))

    @given(st.integers(0, 299), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_recovers_any_delay(self, k, seed):
        x = np.random.default_rng(seed).standard_normal(600)
        g = np.concatenate([np.zeros(k), x])[:600]
        assert align(sig(x), sig(g))[0] == k


class TestEnvelope:
    def test_zero_signal(self):
        assert not energy_envelope(sig(np.zeros(800)), 80).mask.any()

    def test_single_burst(self):
        x = np.zeros(4000)
        x[1000:2000] = 1.0
        env = energy_envelope(sig(x), 80, floor_rms=0.0)
        expected = np.zeros(50, dtype=np.uint8)
        expected[1000 // 80:-(-2000 // 80)] = 1
        np.testing.assert_array_equal(env.mask, expected)

    def test_weak_burst_below_threshold(self):
        x = np.zeros(4000)
        x[800:1600] = 1.0
        x[2400:3200] = np.sqrt(0.03)
        env = energy_envelope(sig(x), 80, 0.05, floor_rms=0.0)
        assert env.mask[10:20].all()
        assert not env.mask[30:40].any()

    def test_gap_closing(self):
        x = np.ones(1600)
        x[800:880] = 0.0  # a single 10 ms frame
        env = energy_envelope(sig(x), 80, floor_rms=0.0)
        assert len(env.runs()) == 1
        env = energy_envelope(sig(x), 80, floor_rms=0.0, min_gap_sec=0.0)
        assert len(env.runs()) == 2

    def test_bad_args(self):
        with pytest.raises(ValueError):
            energy_envelope(sig(np.ones(10)), 0)
        with pytest.raises(ValueError):
            energy_envelope(sig(np.ones(10)), 2, threshold_frac=1.0)

    def test_apply(self):
        x = sig(np.random.default_rng(8).standard_normal(800))
        ones = EnergyEnvelope(np.ones(10), 80, 8000.0)
        zeros = EnergyEnvelope(np.zeros(10), 80, 8000.0)
        np.testing.assert_array_equal(apply_envelope(ones, x).samples, x.samples)
        assert not apply_envelope(zeros, x).samples.any()

    def test_apply_mismatch(self):
        with pytest.raises(EnvelopeMismatch):
            apply_envelope(EnergyEnvelope(np.ones(3), 80, 8000.0), sig(np.ones(800)))
        with pytest.raises(EnvelopeMismatch):
            apply_envelope(EnergyEnvelope(np.ones(10), 80, 16000.0), sig(np.ones(800)))

    @given(arrays(np.float64, st.integers(1, 300), elements=finite),
           st.integers(1, 20), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_apply_idempotent(self, x, frame, seed):
        n_frames = -(-x.shape[0] // frame)
        mask = np.random.default_rng(seed).integers(0, 2, n_frames)
        env = EnergyEnvelope(mask, frame, 8000.0)
        once = apply_envelope(env, sig(x))
        np.testing.assert_array_equal(apply_envelope(env, once).samples, once.samples)
        assert np.all(np.abs(once.samples) <= np.abs(x))


class TestXcorr:
    def test_self(self):
        x = np.random.default_rng(9).standard_normal(300)
        h = xcorr_normalized(sig(x), sig(x))
        assert h.peak() == (0, pytest.approx(1.0))

    def test_negated(self):
        x = np.random.default_rng(10).standard_normal(300)
        lag, v = xcorr_normalized(sig(x), sig(-x)).peak()
        assert lag == 0 and v == pytest.approx(-1.0)

    def test_impulses(self):
        f = np.zeros(20)
        g = np.zeros(20)
        f[0] = 1.0
        g[10] = 1.0
        h = xcorr_normalized(sig(f), sig(g))
        lag, v = h.peak()
        assert lag == 10 and v == pytest.approx(1.0)
        assert np.count_nonzero(np.abs(h.values) > 1e-12) == 1

    def test_definition(self):
        rng = np.random.default_rng(11)
        f, g = rng.standard_normal(37), rng.standard_normal(23)
        h = xcorr_normalized(sig(f), sig(g))
        E = np.sqrt(np.dot(f, f) * np.dot(g, g))
        for k in (-36, -5, 0, 7, 22):
            ref = sum(f[t] * g[t + k] for t in range(37) if 0 <= t + k < 23) / E
            assert h.values[k + h.zero_lag_index] == pytest.approx(ref, abs=1e-12)
        assert len(h) == 37 + 23 - 1

    def test_degenerate(self):
        with pytest.raises(DegenerateSignal):
            xcorr_normalized(sig(np.zeros(10)), sig(np.ones(10)))
        with pytest.raises(DegenerateSignal):
            xcorr_normalized(sig([]), sig(np.ones(10)))

    def test_direct_and_fft_paths_agree(self):
        rng = np.random.default_rng(12)
        f, g = rng.standard_normal(DIRECT_XCORR_MAX), rng.standard_normal(DIRECT_XCORR_MAX)
        h = xcorr_normalized(sig(f), sig(g))
        direct = sps.correlate(g, f, mode="full", method="direct") / np.sqrt(np.dot(f, f) * np.dot(g, g))
        np.testing.assert_allclose(h.values, direct, atol=1e-9)

    @given(arrays(np.float64, st.integers(1, 200), elements=finite).filter(lambda a: np.any(a != 0)),
           arrays(np.float64, st.integers(1, 200), elements=finite).filter(lambda a: np.any(a != 0)))
    @settings(max_examples=80, deadline=None)
    def test_cauchy_schwarz(self, f, g):
        h = xcorr_normalized(sig(f), sig(g))
        assert np.max(np.abs(h.values)) <= 1 + 1e-9
        assert isinstance(h, CrossCorrelation)
