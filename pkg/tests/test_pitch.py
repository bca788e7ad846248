import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vauth.errors import NoPitch, SegmentTooShort
from vauth.pitch import GlottalPulseTrain, extract_glottal_pulses, pitch_distance
from vauth.signal_core import SampledSignal

RATE = 8000.0


def pulse_wave(f0, dur=0.2, rate=RATE, phase=0.0):
    """Damped-resonance pulse train: a decaying 700 Hz ring at every closure instant."""
    n = int(round(dur * rate))
    x = np.zeros(n)
    period = rate / f0
    k = np.arange(int(0.006 * rate))
    ring = np.exp(-k / (0.0015 * rate)) * np.cos(2 * np.pi * 700 * k / rate)
    t = phase * period
    while t < n:
        i = int(round(t))
        m = min(len(ring), n - i)
        x[i:i + m] += ring[:m]
        t += period
    return SampledSignal(x, rate)


def train_at(f0, dur=0.2):
    return GlottalPulseTrain.from_times(np.arange(0.0, dur, 1.0 / f0), 1.25 / 80)


def test_125hz_mean_cycle():
    p = extract_glottal_pulses(pulse_wave(125.0))
    assert p.mean_cycle_sec == pytest.approx(0.008, rel=0.05)


@pytest.mark.parametrize("f0", [80, 100, 140, 200, 250, 333])
def test_frequency_range(f0):
    p = extract_glottal_pulses(pulse_wave(float(f0), 0.3))
    assert 0.95 * f0 <= p.f0_hz <= 1.05 * f0


def test_white_noise_has_no_long_runs():
    runs = [extract_glottal_pulses(SampledSignal(np.random.default_rng(s).standard_normal(1600), RATE)
                                   ).longest_run_sec for s in range(100)]
    assert max(runs) < 0.02


def test_silence():
    p = extract_glottal_pulses(SampledSignal(np.zeros(1600), RATE))
    assert len(p) == 0 and p.longest_run_sec == 0.0


def test_too_short():
    with pytest.raises(SegmentTooShort):
        extract_glottal_pulses(SampledSignal(np.zeros(100), RATE))


def test_bad_range():
    with pytest.raises(ValueError):
        extract_glottal_pulses(pulse_wave(125.0), 200.0, 100.0)


def test_train_invariants():
    p = extract_glottal_pulses(pulse_wave(160.0, 0.3))
    assert np.all(np.diff(p.pulse_times) > 0)
    np.testing.assert_allclose(p.cycles, np.diff(p.pulse_times))
    assert p.longest_run_sec > 0.2


@pytest.mark.parametrize("d", [5, 37, 80, 123])
def test_shift_invariance(d):
    # the frame grid does not move with the signal, so pulses within one
    # 40 ms frame of either edge may differ; the interior must not
    x = pulse_wave(140.0, 0.25).samples
    a = extract_glottal_pulses(SampledSignal(np.concatenate([x, np.zeros(d)]), RATE))
    b = extract_glottal_pulses(SampledSignal(np.concatenate([np.zeros(d), x]), RATE))
    lo, hi = 0.04, 0.25 - 0.04
    ta = a.pulse_times[(a.pulse_times > lo) & (a.pulse_times < hi)]
    tb = b.pulse_times - d / RATE
    tb = tb[(tb > lo) & (tb < hi)]
    assert len(ta) == len(tb) > 20
    np.testing.assert_allclose(tb, ta, atol=1.0 / RATE)
    np.testing.assert_allclose(np.diff(tb), np.diff(ta), atol=2.0 / RATE)


class TestDistance:
    def test_identical(self):
        t = train_at(120.0)
        assert pitch_distance(t, t) == 0.0

    def test_octave(self):
        assert pitch_distance(train_at(100.0), train_at(200.0)) == pytest.approx(0.5)

    def test_close_frequencies(self):
        # direct computation: |1/120 - 1/126| / (1/120)
        d = pitch_distance(train_at(120.0), train_at(126.0))
        assert d == pytest.approx(0.047, abs=0.01)
        assert d == pytest.approx(6 / 126, abs=0.002)

    def test_empty(self):
        with pytest.raises(NoPitch):
            pitch_distance(train_at(120.0), GlottalPulseTrain.from_times([], 0.0156))

    def test_non_overlapping_trains(self):
        a = GlottalPulseTrain.from_times(np.arange(0.0, 0.1, 0.008), 0.0156)
        b = GlottalPulseTrain.from_times(np.arange(1.0, 1.1, 0.008), 0.0156)
        assert pitch_distance(a, b) == 1.0

    @given(st.floats(80, 333), st.floats(80, 333), st.floats(0, 0.005))
    @settings(max_examples=80, deadline=None)
    def test_symmetric(self, fa, fb, offset):
        a = train_at(fa)
        b = GlottalPulseTrain.from_times(np.arange(offset, 0.2, 1.0 / fb), 1.25 / 80)
        assert pitch_distance(a, b) == pytest.approx(pitch_distance(b, a), abs=1e-12)
        assert 0 <= pitch_distance(a, b) <= 1
