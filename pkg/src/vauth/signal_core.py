"""Time-domain DSP primitives for the pre-processing stage.

Every function here is pure: inputs are never mutated and the returned
:class:`SampledSignal` objects hold read-only sample buffers.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .errors import AlignmentFailed, DegenerateSignal, EnvelopeMismatch, InvalidCutoff

# Direct-form correlation is used below this many output lags.
DIRECT_XCORR_MAX = 4096
XCORR_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Mono signal: a float64 sample buffer plus its sampling rate."""

    samples: np.ndarray
    rate_hz: float

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        rate = float(self.rate_hz)
        if not rate > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "rate_hz", rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.rate_hz

    def with_samples(self, samples) -> "SampledSignal":
        return SampledSignal(samples, self.rate_hz)

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))

    @classmethod
    def empty(cls, rate_hz: float = 8000.0) -> "SampledSignal":
        return cls(np.zeros(0), rate_hz)


@dataclass(frozen=True, eq=False)
class EnergyEnvelope:
    """Binary per-frame mask marking high-energy regions."""

    mask: np.ndarray
    frame_len: int
    rate_hz: float

    def __post_init__(self):
        m = np.array(self.mask, dtype=np.uint8, copy=True).reshape(-1)
        if np.any(m > 1):
            raise ValueError("mask values must be 0 or 1")
        if int(self.frame_len) < 1:
            raise ValueError("frame_len must be >= 1")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "frame_len", int(self.frame_len))
        object.__setattr__(self, "rate_hz", float(self.rate_hz))

    def runs(self) -> list[tuple[int, int]]:
        """Maximal runs of 1s as half-open ``(first_frame, end_frame)`` pairs."""
        return _runs(self.mask.astype(bool))

    def sample_mask(self, n_samples: int) -> np.ndarray:
        m = np.repeat(self.mask.astype(bool), self.frame_len)
        if m.shape[0] < n_samples:
            m = np.concatenate([m, np.zeros(n_samples - m.shape[0], dtype=bool)])
        return m[:n_samples]


@dataclass(frozen=True, eq=False)
class CrossCorrelation:
    """Normalized cross-correlation over the full lag range.

    ``values[k]`` corresponds to lag ``k - zero_lag_index``; a positive lag
    means the second signal is delayed relative to the first.
    """

    values: np.ndarray
    zero_lag_index: int

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "zero_lag_index", int(self.zero_lag_index))

    def __len__(self):
        return self.values.shape[0]

    @property
    def lags(self) -> np.ndarray:
        return np.arange(len(self)) - self.zero_lag_index

    def peak(self) -> tuple[int, float]:
        """Lag and value at the (earliest) maximum of ``|values|``."""
        i = int(np.argmax(np.abs(self.values)))
        return i - self.zero_lag_index, float(self.values[i])


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    if flags.size == 0:
        return []
    d = np.diff(np.concatenate([[0], flags.astype(np.int8), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def _require_same_rate(f: SampledSignal, g: SampledSignal):
    if f.rate_hz != g.rate_hz:
        raise ValueError(f"sampling rates differ: {f.rate_hz} vs {g.rate_hz}")


def design_highpass(cutoff_hz: float, rate_hz: float, atten_db: float = 50.0) -> np.ndarray:
    """Odd-length linear-phase windowed-sinc highpass.

    The -6 dB point sits at ``cutoff_hz`` and the transition band spans
    ``[cutoff/2, 3*cutoff/2]``.
    """
    nyq = rate_hz / 2.0
    if not 0 < cutoff_hz < nyq:
        raise InvalidCutoff(f"cutoff {cutoff_hz} Hz outside (0, {nyq}) Hz")
    width = min(cutoff_hz, 2 * (nyq - cutoff_hz)) / nyq
    numtaps, beta = sps.kaiserord(atten_db, width)
    numtaps |= 1
    return sps.firwin(numtaps, cutoff_hz, window=("kaiser", beta), pass_zero=False, fs=rate_hz)


def highpass_filter(signal: SampledSignal, cutoff_hz: float) -> SampledSignal:
    """Zero-phase FIR highpass; output has the input's length."""
    taps = design_highpass(cutoff_hz, signal.rate_hz)
    if len(signal) == 0:
        return signal
    y = sps.oaconvolve(signal.samples, taps, mode="same")
    return signal.with_samples(y)


def resample(signal: SampledSignal, target_rate_hz: float) -> SampledSignal:
    """Polyphase rational resampling with a Kaiser anti-alias filter."""
    if not target_rate_hz > 0:
        raise ValueError("target_rate_hz must be positive")
    if target_rate_hz == signal.rate_hz:
        return SampledSignal(signal.samples, signal.rate_hz)
    ratio = Fraction(target_rate_hz / signal.rate_hz).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    if len(signal) == 0:
        return SampledSignal(np.zeros(0), target_rate_hz)
    y = sps.resample_poly(signal.samples, up, down)
    return SampledSignal(y, target_rate_hz)


def _running_stats(e: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered leave-one-out running mean and std of ``e``."""
    n = e.shape[0]
    c1 = np.concatenate([[0.0], np.cumsum(e)])
    c2 = np.concatenate([[0.0], np.cumsum(e * e)])
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    cnt = (hi - lo - 1).astype(np.float64)
    s1 = c1[hi] - c1[lo] - e
    s2 = c2[hi] - c2[lo] - e * e
    cnt = np.maximum(cnt, 1.0)
    # cumulative sums can cancel to slightly below zero
    mean = np.maximum(s1 / cnt, 0.0)
    var = np.maximum(s2 / cnt - mean * mean, 0.0)
    return mean, np.sqrt(var)


def clip_spikes(signal: SampledSignal, window_len: int, k_sigma: float = 6.0,
                max_iter: int = 50) -> SampledSignal:
    """Clamp samples whose energy exceeds a running mean + ``k_sigma`` std.

    Energy is the squared amplitude. Statistics come from a centered window
    of ``window_len`` samples that excludes the sample under test. Clamping is
    repeated on the updated signal until no sample exceeds its bound, so a
    multi-sample transient cannot shield itself by inflating the statistics.
    Clamped samples keep their sign.
    """
    if window_len < 8:
        raise ValueError("window_len must be >= 8")
    x = np.array(signal.samples, dtype=np.float64)
    half = int(window_len) // 2
    for _ in range(max_iter):
        e = x * x
        mean, std = _running_stats(e, half)
        bound = mean + k_sigma * std
        over = e > bound * (1.0 + 1e-12) + 1e-300
        if not np.any(over):
            break
        x[over] = np.sign(x[over]) * np.sqrt(bound[over])
    return signal.with_samples(x)


def normalize_unity(signal: SampledSignal) -> SampledSignal:
    peak = float(np.max(np.abs(signal.samples))) if len(signal) else 0.0
    if peak == 0.0:
        raise DegenerateSignal("cannot normalize an all-zero signal")
    return signal.with_samples(signal.samples / peak)


def _raw_xcorr(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    # out[k] = sum_t f[t] g[t + k - (len(f) - 1)]
    n_out = f.shape[0] + g.shape[0] - 1
    method = "direct" if n_out <= DIRECT_XCORR_MAX else "fft"
    return sps.correlate(g, f, mode="full", method=method)


def xcorr_normalized(f: SampledSignal, g: SampledSignal) -> CrossCorrelation:
    """Full-range cross-correlation divided by ``sqrt(energy(f) * energy(g))``."""
    _require_same_rate(f, g)
    if len(f) == 0 or len(g) == 0:
        raise DegenerateSignal("cross-correlation of an empty signal")
    pf, pg = np.max(np.abs(f.samples)), np.max(np.abs(g.samples))
    if pf == 0.0 or pg == 0.0:
        raise DegenerateSignal("cross-correlation of an all-zero signal")
    # scale-free, so prescale to unit peak; keeps tiny inputs from underflowing
    a, b = f.samples / pf, g.samples / pg
    raw = _raw_xcorr(a, b)
    return CrossCorrelation(raw / np.sqrt(np.dot(a, a) * np.dot(b, b)), len(f) - 1)


def best_lag(values: np.ndarray, zero_lag_index: int) -> int:
    """Lag of max ``|values|``; exact ties go to the smallest ``|lag|``."""
    a = np.abs(values)
    top = a.max()
    cand = np.flatnonzero(a >= top) - zero_lag_index
    return int(cand[np.argmin(np.abs(cand))])


def align(f: SampledSignal, g: SampledSignal, max_lag: int | None = None
          ) -> tuple[int, SampledSignal, SampledSignal]:
    """Shift ``g`` against ``f`` to the lag of maximum cross-correlation.

    Returns ``(shift, f_aligned, g_aligned)``; ``shift > 0`` means ``g`` lags
    ``f`` by that many samples. Both outputs are cut to the overlap. With
    ``max_lag`` the search is restricted to ``|shift| <= max_lag``.
    """
    _require_same_rate(f, g)
    if len(f) == 0 or len(g) == 0:
        raise AlignmentFailed("cannot align an empty signal")
    raw = _raw_xcorr(f.samples, g.samples)
    zero = len(f) - 1
    if max_lag is not None:
        if max_lag < 0:
            raise ValueError("max_lag must be non-negative")
        lo = max(0, zero - int(max_lag))
        raw = raw[lo:zero + int(max_lag) + 1]
        zero -= lo
    shift = best_lag(raw, zero) if np.any(raw) else 0
    fs = f.samples[max(0, -shift):]
    gs = g.samples[max(0, shift):]
    n = min(fs.shape[0], gs.shape[0])
    if n <= 0:
        raise AlignmentFailed(f"no overlap left after shifting by {shift}")
    return shift, f.with_samples(fs[:n]), g.with_samples(gs[:n])


def frame_energies(x: np.ndarray, frame_len: int) -> np.ndarray:
    """Mean squared amplitude per non-overlapping frame (last frame may be partial)."""
    n = x.shape[0]
    n_frames = -(-n // frame_len)
    pad = n_frames * frame_len - n
    sq = np.concatenate([x * x, np.zeros(pad)]).reshape(n_frames, frame_len)
    counts = np.full(n_frames, float(frame_len))
    if pad:
        counts[-1] = frame_len - pad
    return sq.sum(axis=1) / counts


def _close_gaps(mask: np.ndarray, max_gap: int) -> np.ndarray:
    if max_gap <= 0:
        return mask
    out = mask.copy()
    gaps = _runs(~mask)
    for s, e in gaps:
        if s > 0 and e < mask.shape[0] and e - s <= max_gap:
            out[s:e] = True
    return out


def energy_envelope(signal: SampledSignal, frame_len: int | None = None,
                    threshold_frac: float = 0.05, floor_rms: float = 0.02,
                    min_gap_sec: float = 0.02) -> EnergyEnvelope:
    """Mark frames whose mean energy exceeds ``threshold_frac`` of the loudest frame.

    Parameters
    ----------
    frame_len : int, optional
        Samples per frame; defaults to 10 ms.
    threshold_frac : float
        Relative threshold against the maximum frame energy.
    floor_rms : float
        Absolute floor: frames quieter than this RMS are never marked. This
        models the sensor's idle noise level.
    min_gap_sec : float
        Interior runs of 0-frames strictly shorter than this are filled, so a
        single quiet frame does not split a phoneme. Set 0 to disable.
    """
    if frame_len is None:
        frame_len = max(1, int(round(0.01 * signal.rate_hz)))
    if frame_len < 1:
        raise ValueError("frame_len must be >= 1")
    if not 0 < threshold_frac < 1:
        raise ValueError("threshold_frac must be in (0, 1)")
    if len(signal) == 0:
        return EnergyEnvelope(np.zeros(0, dtype=np.uint8), frame_len, signal.rate_hz)
    fe = frame_energies(signal.samples, frame_len)
    mask = (fe > threshold_frac * fe.max()) & (fe > floor_rms * floor_rms)
    frame_sec = frame_len / signal.rate_hz
    max_gap = int(np.ceil(min_gap_sec / frame_sec - 1e-9)) - 1
    mask = _close_gaps(mask, max_gap)
    return EnergyEnvelope(mask.astype(np.uint8), frame_len, signal.rate_hz)


def apply_envelope(env: EnergyEnvelope, signal: SampledSignal) -> SampledSignal:
    """Zero every sample under a 0-frame of ``env``."""
    if env.rate_hz != signal.rate_hz:
        raise EnvelopeMismatch(f"envelope rate {env.rate_hz} != signal rate {signal.rate_hz}")
    need = -(-len(signal) // env.frame_len)
    if abs(need - env.mask.shape[0]) > 1:
        raise EnvelopeMismatch(
            f"envelope covers {env.mask.shape[0]} frames, signal needs {need}")
    keep = env.sample_mask(len(signal))
    return signal.with_samples(np.where(keep, signal.samples, 0.0))
