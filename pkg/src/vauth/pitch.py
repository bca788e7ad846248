"""Glottal pulse extraction by short-time autocorrelation.

Periodicity is measured per frame with Boersma's windowed autocorrelation,
where the frame's autocorrelation is divided by the window's own
autocorrelation to undo the taper. Voiced frames are linked into runs, and
pulses are placed on waveform maxima along the period grid of each run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal.windows import hann

from .errors import NoPitch, SegmentTooShort
from .signal_core import SampledSignal, _runs

F0_MIN_HZ = 80.0
F0_MAX_HZ = 333.0


@dataclass(frozen=True)
class PitchConfig:
    frame_sec: float = 0.04
    hop_sec: float = 0.01
    voicing_threshold: float = 0.45
    # frames whose peak is below this fraction of the segment peak are silent
    silence_threshold: float = 0.05
    # periodicity candidates within this much of the best count as ties;
    # ties resolve to the shortest lag
    tie_tolerance: float = 0.02
    # pulse search window around each predicted instant, fraction of a period
    search_frac: float = 0.2
    min_segment_sec: float = 0.02


DEFAULT_PITCH = PitchConfig()


@dataclass(frozen=True, eq=False)
class GlottalPulseTrain:
    pulse_times: np.ndarray
    cycles: np.ndarray
    longest_run_sec: float
    mean_cycle_sec: float
    # intervals longer than this are breaks between runs, not glottal cycles
    max_cycle_sec: float

    @property
    def f0_hz(self) -> float:
        return 1.0 / self.mean_cycle_sec if self.mean_cycle_sec > 0 else 0.0

    def __len__(self):
        return self.pulse_times.shape[0]

    def valid_cycles(self) -> np.ndarray:
        """Boolean mask over ``cycles`` marking within-run intervals."""
        return self.cycles <= self.max_cycle_sec

    @classmethod
    def from_times(cls, times, max_cycle_sec: float) -> "GlottalPulseTrain":
        t = np.asarray(times, dtype=np.float64)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("pulse_times must be strictly increasing")
        cycles = np.diff(t)
        ok = cycles <= max_cycle_sec
        longest = 0.0
        for s, e in _runs(ok):
            longest = max(longest, float(t[e] - t[s]))
        if ok.any():
            mean = float(cycles[ok].mean())
        elif cycles.size:
            mean = float(cycles.mean())
        else:
            mean = 0.0
        return cls(t, cycles, longest, mean, float(max_cycle_sec))


def _frame_periodicity(x: np.ndarray, fs: float, f0_min: float, f0_max: float,
                       cfg: PitchConfig):
    """Per-frame period (samples, NaN when unvoiced) and strength."""
    W = int(round(cfg.frame_sec * fs))
    hop = max(1, int(round(cfg.hop_sec * fs)))
    min_lag = max(2, int(np.floor(fs / f0_max)))
    max_lag = int(np.ceil(fs / f0_min))
    W = max(W, 2 * max_lag + 2)
    n = x.shape[0]
    half = W // 2
    xp = np.concatenate([np.zeros(half), x, np.zeros(W)])
    centers = np.arange(0, n, hop)
    frames = sliding_window_view(xp, W)[centers]

    win = hann(W, sym=False)
    nfft = 1 << int(np.ceil(np.log2(W + max_lag + 2)))
    rw = np.fft.irfft(np.abs(np.fft.rfft(win, nfft)) ** 2, nfft)[: max_lag + 2]
    rw = rw / rw[0]

    local = frames - frames.mean(axis=1, keepdims=True)
    r = np.fft.irfft(np.abs(np.fft.rfft(local * win, n=nfft, axis=1)) ** 2, nfft, axis=1)
    r = r[:, : max_lag + 2]
    r0 = r[:, 0].copy()
    ok = r0 > 0
    rn = np.zeros_like(r)
    rn[ok] = r[ok] / r0[ok, None] / rw[None, :]

    global_peak = np.max(np.abs(x)) if n else 0.0
    frame_peak = np.abs(frames).max(axis=1)
    loud = ok & (frame_peak >= cfg.silence_threshold * global_peak) & (global_peak > 0)

    periods = np.full(centers.shape[0], np.nan)
    strengths = np.zeros(centers.shape[0])
    lags = np.arange(min_lag, max_lag + 1)
    mid = rn[:, lags]
    is_peak = (mid > rn[:, lags - 1]) & (mid >= rn[:, lags + 1])
    for k in np.flatnonzero(loud & is_peak.any(axis=1)):
        cand = lags[is_peak[k]]
        y0, y1, y2 = rn[k, cand - 1], rn[k, cand], rn[k, cand + 1]
        den = y0 - 2 * y1 + y2
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(den < 0, 0.5 * (y0 - y2) / den, 0.0)
        off = np.clip(off, -0.5, 0.5)
        val = np.minimum(y1 - 0.25 * (y0 - y2) * off, 1.0)
        best = val.max()
        if best <= cfg.voicing_threshold:
            continue
        pick = int(np.flatnonzero(val >= best - cfg.tie_tolerance)[0])
        periods[k] = cand[pick] + off[pick]
        strengths[k] = val[pick]
    return centers, periods, strengths, hop


def _refine(y: np.ndarray, j: int) -> float:
    if 0 < j < y.shape[0] - 1:
        a, b, c = y[j - 1], y[j], y[j + 1]
        den = a - 2 * b + c
        if den < 0:
            return j + float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
    return float(j)


def _place_run(x: np.ndarray, start: int, end: int, c: np.ndarray, T: np.ndarray,
               frac: float) -> list[float]:
    seg = x[start:end]
    sign = 1.0 if seg.max() >= -seg.min() else -1.0
    y = sign * x

    def period_at(i):
        return float(np.interp(i, c, T))

    anchor = start + int(np.argmax(y[start:end]))
    fwd = [anchor]
    i = anchor
    while True:
        P = period_at(i)
        lo = int(np.floor(i + P - frac * P))
        hi = min(end, int(np.ceil(i + P + frac * P)) + 1)
        if lo >= end or hi - lo < 1:
            break
        j = lo + int(np.argmax(y[lo:hi]))
        if j <= i:
            break
        fwd.append(j)
        i = j
    back = []
    i = anchor
    while True:
        P = period_at(i)
        hi = int(np.ceil(i - P + frac * P)) + 1
        lo = max(start, int(np.floor(i - P - frac * P)))
        if hi <= start or hi - lo < 1:
            break
        j = lo + int(np.argmax(y[lo:hi]))
        if j >= i:
            break
        back.append(j)
        i = j
    return [_refine(y, j) for j in back[::-1] + fwd]


def extract_glottal_pulses(segment: SampledSignal, f0_min_hz: float = F0_MIN_HZ,
                           f0_max_hz: float = F0_MAX_HZ,
                           config: PitchConfig = DEFAULT_PITCH) -> GlottalPulseTrain:
    """Detect glottal pulse instants in ``segment``.

    Candidate periods are restricted to ``[1/f0_max_hz, 1/f0_min_hz]``.
    Unvoiced or silent stretches produce no pulses.

    Raises
    ------
    SegmentTooShort
        If the segment is shorter than ``config.min_segment_sec``.
    """
    if not f0_min_hz < f0_max_hz:
        raise ValueError("f0_min_hz must be below f0_max_hz")
    fs = segment.rate_hz
    x = segment.samples
    if x.shape[0] < config.min_segment_sec * fs:
        raise SegmentTooShort(
            f"segment of {segment.duration * 1e3:.1f} ms is shorter than "
            f"{config.min_segment_sec * 1e3:.0f} ms")
    max_cycle = 1.25 / f0_min_hz
    centers, periods, _, hop = _frame_periodicity(x, fs, f0_min_hz, f0_max_hz, config)
    voiced = ~np.isnan(periods)
    times: list[float] = []
    n = x.shape[0]
    for s, e in _runs(voiced):
        start = max(0, int(centers[s] - hop // 2))
        end = min(n, int(centers[e - 1] + hop - hop // 2))
        if end - start < 2:
            continue
        c = centers[s:e].astype(np.float64)
        T = periods[s:e]
        for p in _place_run(x, start, end, c, T, config.search_frac):
            if not times or p > times[-1]:
                times.append(p)
    return GlottalPulseTrain.from_times(np.asarray(times) / fs, max_cycle)


def _directed_terms(a: GlottalPulseTrain, b: GlottalPulseTrain) -> list[float]:
    ta, tb = a.pulse_times, b.pulse_times
    ca, cb = a.cycles, b.cycles
    va, vb = a.valid_cycles(), b.valid_cycles()
    out = []
    for i in np.flatnonzero(va):
        t = ta[i]
        k = int(np.searchsorted(tb, t))
        best = None
        for j in (k - 1, k):
            if 0 <= j < tb.shape[0] and (best is None or abs(tb[j] - t) < abs(tb[best] - t)):
                best = j
        if best is None or abs(tb[best] - t) > ca[i] / 2:
            continue
        if best >= cb.shape[0] or not vb[best]:
            continue
        out.append(abs(ca[i] - cb[best]) / max(ca[i], cb[best]))
    return out


def pitch_distance(a: GlottalPulseTrain, b: GlottalPulseTrain) -> float:
    """Mean relative cycle-length difference between two pulse trains.

    Each pulse with a within-run cycle is paired with the nearest pulse of
    the other train, if one lies within half a cycle. Pairs are collected in
    both directions so the result is symmetric. Trains that overlap nowhere
    score 1.0.
    """
    if not a.valid_cycles().any() or not b.valid_cycles().any():
        raise NoPitch("pitch distance needs at least one glottal cycle in each train")
    terms = _directed_terms(a, b) + _directed_terms(b, a)
    if not terms:
        return 1.0
    return float(np.mean(terms))
