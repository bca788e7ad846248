"""Source-filter synthesis of paired microphone / body-conduction recordings.

One glottal excitation drives both channels. The microphone channel is the
excitation shaped by formant resonators plus air noise. The body channel
mixes the bare excitation with the tissue-conducted tract output, then
applies a lowpass, an attenuation and a sensor noise floor. Unvoiced sounds
are band-limited noise that barely reaches the body channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import signal as sps

from .errors import InvalidConfig
from .signal_core import SampledSignal

# Amplitude of turbulence noise reaching the body sensor, relative to the mic.
BODY_NOISE_LEAK = 0.05
NEUTRAL_HIGH_FORMANTS = ((3500.0, 200.0), (4500.0, 250.0))
WANDER_KNOT_SEC = 0.03


@dataclass(frozen=True)
class BodyChannel:
    lowpass_hz: float = 3000.0
    attenuation_db: float = 6.0
    noise_floor: float = 1e-4
    # share of the vocal-tract output conducted through tissue, the rest is
    # the bare glottal excitation
    tract_mix: float = 0.7


@dataclass(frozen=True)
class SynthConfig:
    f0_hz: float = 125.0
    formants: tuple = ((500.0, 80.0), (1500.0, 100.0), (2500.0, 140.0))
    duration_sec: float = 0.3
    jitter_pct: float = 1.0
    shimmer_pct: float = 3.0
    # slow random wander of f0 around the planned contour, percent
    drift_pct: float = 3.0
    air_snr_db: float = 30.0
    body_channel: BodyChannel = field(default_factory=BodyChannel)
    seed: int = 0
    rate_hz: float = 16000.0
    lead_sec: float = 0.2
    tail_sec: float = 0.2
    mic_delay_sec: float = 0.0005
    mic_peak: float = 0.6
    acc_peak: float = 0.4

    def __post_init__(self):
        if not 80.0 <= self.f0_hz <= 333.0:
            raise InvalidConfig(f"f0_hz {self.f0_hz} outside the human range [80, 333] Hz")
        if self.duration_sec <= 0:
            raise InvalidConfig("duration_sec must be positive")


@dataclass(frozen=True)
class PlanElement:
    """One stretch of an utterance plan.

    ``kind`` is ``voiced``, ``noise`` (unvoiced), ``mixed`` (voiced plus
    frication) or ``silence``. ``f0`` of None inherits the config's f0.
    """

    kind: str
    dur: float
    f0: float | None = None
    formants: tuple = ()
    band: tuple = ()
    gain: float = 1.0

    @property
    def voiced(self) -> bool:
        return self.kind in ("voiced", "mixed")


@dataclass(frozen=True, eq=False)
class UtterancePair:
    acc: SampledSignal
    mic: SampledSignal
    truth: dict
    label: str = ""


@lru_cache(maxsize=1)
def phoneme_table() -> tuple:
    """The 44-entry phoneme inventory shipped in ``data/phonemes.json``."""
    text = resources.files("vauth").joinpath("data/phonemes.json").read_text(encoding="utf-8")
    return tuple(json.loads(text)["phonemes"])


def _element_from_json(d: dict, f0=None, formant_scale=1.0) -> PlanElement:
    fm = tuple((float(F) * formant_scale, float(B)) for F, B in d.get("formants", ()))
    return PlanElement(kind=d["kind"], dur=float(d["dur"]), f0=f0, formants=fm,
                       band=tuple(float(b) for b in d.get("band", ())),
                       gain=float(d.get("gain", 1.0)))


def resonator_sos(formants, rate_hz: float) -> np.ndarray:
    """Cascade of unity-DC-gain two-pole resonators as second-order sections."""
    nyq = rate_hz / 2
    sos = []
    for F, B in formants:
        if not 0 < F < nyq:
            raise InvalidConfig(f"formant {F} Hz is not below Nyquist ({nyq} Hz)")
        r = np.exp(-np.pi * B / rate_hz)
        c = 2 * r * np.cos(2 * np.pi * F / rate_hz)
        sos.append([1.0 - c + r * r, 0.0, 0.0, 1.0, -c, r * r])
    return np.asarray(sos)


def _ramp_gate(n: int, start: int, end: int, ramp: int) -> np.ndarray:
    g = np.zeros(n)
    if end <= start:
        return g
    g[start:end] = 1.0
    r = min(ramp, (end - start) // 2)
    if r > 0:
        w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        g[start:start + r] = w
        g[end - r:end] = w[::-1]
    return g


def _rosenberg_derivative(tau: np.ndarray, T: float) -> np.ndarray:
    """Rosenberg glottal-flow derivative for one cycle, negative peak -1."""
    tp, tn = 0.4 * T, 0.16 * T
    out = np.zeros_like(tau)
    m1 = (tau >= 0) & (tau < tp)
    m2 = (tau >= tp) & (tau < tp + tn)
    scale = 2 * tn / np.pi
    out[m1] = scale * (np.pi / (2 * tp)) * np.sin(np.pi * tau[m1] / tp)
    out[m2] = -np.sin(np.pi * (tau[m2] - tp) / (2 * tn))
    return out


def _pulse_instants(f0_track: np.ndarray, voiced: np.ndarray, fs: float, jitter: float,
                    rng: np.random.Generator) -> list[float]:
    n = f0_track.shape[0]
    times = []
    t = 0.0
    while True:
        i = int(np.floor(t * fs))
        if i >= n:
            break
        if not voiced[i]:
            nxt = np.flatnonzero(voiced[i:])
            if nxt.size == 0:
                break
            t = (i + int(nxt[0]) + 1e-6) / fs
            continue
        times.append(t)
        period = (1.0 + jitter * rng.standard_normal()) / f0_track[i]
        t += max(period, 0.5 / f0_track[i])
    return times


def _excitation(times, f0_track, amp_track, fs, shimmer, rng) -> np.ndarray:
    n = f0_track.shape[0]
    x = np.zeros(n)
    for t in times:
        i0 = int(np.floor(t * fs))
        T = 1.0 / f0_track[min(i0, n - 1)]
        i1 = min(n, int(np.ceil((t + 0.56 * T) * fs)) + 1)
        idx = np.arange(max(i0, 0), i1)
        a = amp_track[min(i0, n - 1)] * (1.0 + shimmer * rng.standard_normal())
        x[idx] += a * _rosenberg_derivative(idx / fs - t, T)
    return x


def _band_noise(n: int, band, fs: float, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(n)
    lo, hi = band
    hi = min(hi, 0.45 * fs)
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    y = sps.sosfilt(sos, w)
    return y / (np.std(y) + 1e-12)


def synth_utterance(cfg: SynthConfig, phoneme_plan, label: str = "") -> UtterancePair:
    """Render ``phoneme_plan`` through both channels.

    ``phoneme_plan`` is a sequence of :class:`PlanElement` or of
    ``(f0, formants, dur, voiced)`` tuples. The returned ``truth`` holds the
    sounding regions (maximal runs of non-silent elements) with their mean f0
    and the exact glottal pulse instants.
    """
    plan = [_coerce(e, cfg) for e in phoneme_plan]
    if not plan:
        raise InvalidConfig("phoneme_plan is empty")
    fs = cfg.rate_hz
    for el in plan:
        resonator_sos(el.formants, fs)
        if el.band and el.band[0] >= fs / 2:
            raise InvalidConfig(f"noise band {el.band} starts above Nyquist")
    rng = np.random.default_rng(cfg.seed)
    lead = int(round(cfg.lead_sec * fs))
    bounds = []
    pos = lead
    for el in plan:
        k = int(round(el.dur * fs))
        bounds.append((pos, pos + k))
        pos += k
    n = pos + int(round(cfg.tail_sec * fs))
    ramp = int(round(0.01 * fs))

    f0_track = np.full(n, float(cfg.f0_hz))
    knots_t, knots_f = [], []
    for el, (s, e) in zip(plan, bounds):
        if el.voiced and e > s:
            knots_t += [s, e - 1]
            knots_f += [el.f0 or cfg.f0_hz] * 2
    if knots_t:
        f0_track = np.interp(np.arange(n), knots_t, knots_f)
    # random wander: independent log-f0 offsets at knots WANDER_KNOT_SEC apart
    n_knots = max(2, int(n / fs / WANDER_KNOT_SEC) + 2)
    wander = rng.standard_normal(n_knots) * (cfg.drift_pct / 100)
    f0_track = f0_track * np.exp(np.interp(np.arange(n), np.linspace(0, n - 1, n_knots), wander))
    f0_track = np.clip(f0_track, 80.0, 333.0)

    voiced_gate = np.zeros(n)
    amp_track = np.zeros(n)
    for el, (s, e) in zip(plan, bounds):
        if el.voiced:
            g = _ramp_gate(n, s, e, ramp)
            voiced_gate = np.maximum(voiced_gate, (g > 0).astype(float))
            amp_track = np.maximum(amp_track, el.gain * g)
    voiced = voiced_gate > 0
    times = _pulse_instants(f0_track, voiced, fs, cfg.jitter_pct / 100, rng)
    exc = _excitation(times, f0_track, amp_track, fs, cfg.shimmer_pct / 100, rng)

    mic = np.zeros(n)
    noise_part = np.zeros(n)
    for el, (s, e) in zip(plan, bounds):
        if e <= s:
            continue
        g = _ramp_gate(n, s, e, ramp)
        if el.voiced:
            # each element's resonance filters the whole excitation; the
            # gates cross-fade neighbours
            lo, hi = max(0, s - ramp), min(n, e + ramp)
            shaped = sps.sosfilt(resonator_sos(el.formants + NEUTRAL_HIGH_FORMANTS, fs),
                                 exc[:hi])
            seg = np.zeros(n)
            seg[lo:hi] = shaped[lo:hi]
            mic += seg * g
        if el.kind in ("noise", "mixed") and el.band:
            noise_part += el.gain * 0.3 * g * _band_noise(n, el.band, fs, rng)
    mic_clean = mic + noise_part

    # body channel: the excitation, lowpassed and attenuated
    bc = cfg.body_channel
    sos_lp = sps.butter(4, min(bc.lowpass_hz, 0.45 * fs), btype="lowpass", fs=fs, output="sos")
    ex_rms = np.std(exc) + 1e-12
    body_src = exc / ex_rms
    if bc.tract_mix > 0 and np.any(mic):
        body_src = (1 - bc.tract_mix) * body_src + bc.tract_mix * mic / np.std(mic)
    acc_clean = sps.sosfilt(sos_lp, body_src + BODY_NOISE_LEAK * noise_part / ex_rms)

    acc_peak = np.max(np.abs(acc_clean))
    mic_peak = np.max(np.abs(mic_clean))
    att = 10 ** (-bc.attenuation_db / 20)
    if acc_peak > 0:
        acc_clean = acc_clean * (cfg.acc_peak / acc_peak) * att / 10 ** (-6 / 20)
    if mic_peak > 0:
        mic_clean = mic_clean * (cfg.mic_peak / mic_peak)
    active = np.abs(mic_clean) > 0
    p_sig = np.mean(mic_clean[active] ** 2) if active.any() else 0.0
    air_noise = rng.standard_normal(n) * np.sqrt(p_sig / 10 ** (cfg.air_snr_db / 10))
    acc = acc_clean + bc.noise_floor * rng.standard_normal(n)
    mic = mic_clean + air_noise

    delay = cfg.mic_delay_sec * fs
    if delay:
        mic = _fractional_delay(mic, delay)

    regions = []
    cur = None
    for el, (s, e) in zip(plan, bounds):
        if e <= s:
            # an element with no samples does not separate its neighbours
            continue
        if el.kind == "silence" or el.gain == 0:
            if cur is not None:
                regions.append(cur)
                cur = None
            continue
        if cur is None:
            cur = [s, e, []]
        cur[1] = e
        if el.voiced:
            cur[2].append(el.f0 or cfg.f0_hz)
    if cur is not None:
        regions.append(cur)
    truth = {
        "segments": [
            {"start_sec": s / fs, "end_sec": e / fs,
             "f0_hz": float(np.mean(f)) if f else None}
            for s, e, f in regions
        ],
        "pulse_times": [float(t) for t in times],
        "mic_delay_sec": cfg.mic_delay_sec,
        "seed": cfg.seed,
    }
    return UtterancePair(SampledSignal(acc, fs), SampledSignal(mic, fs), truth, label)


def _fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    n = x.shape[0]
    spec = np.fft.rfft(x, 2 * n)
    k = np.arange(spec.shape[0])
    y = np.fft.irfft(spec * np.exp(-2j * np.pi * k * delay / (2 * n)), 2 * n)
    return y[:n]


def _coerce(e, cfg: SynthConfig) -> PlanElement:
    if isinstance(e, PlanElement):
        return e
    f0, formants, dur, voiced = e
    if not voiced:
        kind = "noise" if formants else "silence"
        band = (1000.0, min(6000.0, 0.45 * cfg.rate_hz)) if formants else ()
        return PlanElement(kind, float(dur), None, (), band, 0.5)
    return PlanElement("voiced", float(dur), f0, tuple(tuple(map(float, f)) for f in formants))


@dataclass(frozen=True)
class Speaker:
    seed: int
    base_f0: float
    formant_scale: float


def make_speaker(seed: int) -> Speaker:
    rng = np.random.default_rng([seed, 7919])
    return Speaker(seed, float(rng.uniform(100.0, 210.0)), float(rng.uniform(0.93, 1.12)))


def phoneme_plan(entry: dict, f0: float, formant_scale: float = 1.0) -> list[PlanElement]:
    return [_element_from_json(d, f0, formant_scale) for d in entry["elements"]]


def _distinct_f0s(base: float, count: int, rng: np.random.Generator, spread: float) -> list[float]:
    out: list[float] = []
    while len(out) < count:
        f = float(np.clip(base * np.exp(spread * rng.standard_normal()), 85.0, 320.0))
        if all(abs(f - g) / g > 0.005 for g in out):
            out.append(f)
    return out


def synth_phoneme_bank(seed: int = 0, rate_hz: float = 16000.0,
                       air_snr_db: float = 30.0) -> list[UtterancePair]:
    """One synthetic speaker pronouncing the 44-phoneme inventory.

    Every phoneme gets its own f0 (drawn around the speaker's base pitch) and
    the speaker's formant scaling, so all 44 plans differ pairwise.
    """
    spk = make_speaker(seed)
    rng = np.random.default_rng([seed, 104729])
    table = phoneme_table()
    f0s = _distinct_f0s(spk.base_f0, len(table), rng, 0.12)
    out = []
    for k, (entry, f0) in enumerate(zip(table, f0s)):
        cfg = SynthConfig(f0_hz=f0, seed=int(rng.integers(2**31)), rate_hz=rate_hz,
                          air_snr_db=air_snr_db,
                          lead_sec=float(rng.uniform(0.15, 0.3)),
                          tail_sec=float(rng.uniform(0.15, 0.3)),
                          mic_delay_sec=float(rng.uniform(0.0, 0.0015)))
        pair = synth_utterance(cfg, phoneme_plan(entry, f0, spk.formant_scale),
                               label=entry["symbol"])
        pair.truth["class"] = entry["class"]
        pair.truth["speaker"] = seed
        out.append(pair)
    return out


def synth_command(speaker: Speaker, rng: np.random.Generator, n_words: int | None = None,
                  rate_hz: float = 16000.0, air_snr_db: float = 30.0,
                  label: str = "") -> UtterancePair:
    """A multi-word utterance: syllables from the inventory separated by pauses."""
    table = phoneme_table()
    if n_words is None:
        n_words = int(rng.integers(3, 7))
    plan: list[PlanElement] = []
    n_syll_total = 0
    words = []
    for w in range(n_words):
        words.append([table[int(rng.integers(len(table)))] for _ in range(int(rng.integers(1, 4)))])
        n_syll_total += len(words[-1])
    # declining intonation over the utterance plus per-syllable variation
    contour = speaker.base_f0 * np.linspace(1.12, 0.9, n_syll_total)
    k = 0
    for w, syllables in enumerate(words):
        for entry in syllables:
            f0 = float(np.clip(contour[k] * np.exp(0.06 * rng.standard_normal()), 85.0, 320.0))
            plan += phoneme_plan(entry, f0, speaker.formant_scale)
            k += 1
        if w < n_words - 1:
            plan.append(PlanElement("silence", float(rng.uniform(0.08, 0.2))))
    cfg = SynthConfig(f0_hz=float(np.clip(speaker.base_f0, 80, 333)),
                      seed=int(rng.integers(2**31)), rate_hz=rate_hz, air_snr_db=air_snr_db,
                      lead_sec=float(rng.uniform(0.15, 0.3)), tail_sec=float(rng.uniform(0.15, 0.3)),
                      mic_delay_sec=float(rng.uniform(0.0, 0.0015)))
    pair = synth_utterance(cfg, plan, label=label)
    pair.truth["speaker"] = speaker.seed
    pair.truth["n_words"] = n_words
    return pair


def synth_command_corpus(seed: int = 0, n_utterances: int = 10, rate_hz: float = 16000.0,
                         air_snr_db: float = 30.0) -> list[UtterancePair]:
    """``n_utterances`` distinct commands from the speaker identified by ``seed``."""
    spk = make_speaker(seed)
    rng = np.random.default_rng([seed, 1299709])
    return [synth_command(spk, rng, rate_hz=rate_hz, air_snr_db=air_snr_db,
                          label=f"s{seed}-c{i}") for i in range(n_utterances)]


NOISE_KINDS = ("white", "periodic", "spike")


def make_noise(kind: str, level: float, duration: float, seed: int = 0,
               rate_hz: float = 16000.0, period_sec: float = 0.25) -> SampledSignal:
    """Idle-channel noise.

    ``white``: Gaussian noise with standard deviation ``level``.
    ``periodic``: one frozen noise burst of std ``level`` repeated every
    ``period_sec`` (motion-like pattern).
    ``spike``: near silence with isolated single-sample transients of
    amplitude ``level``.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate_hz))
    if kind == "white":
        x = level * rng.standard_normal(n)
    elif kind == "periodic":
        p = max(2, int(round(period_sec * rate_hz)))
        burst_len = max(1, p // 3)
        burst = level * rng.standard_normal(burst_len) * np.hanning(burst_len + 2)[1:-1] * 1.6
        cell = np.concatenate([burst, np.zeros(p - burst_len)])
        x = np.tile(cell, n // p + 1)[:n] + 1e-4 * rng.standard_normal(n)
    elif kind == "spike":
        x = 1e-4 * rng.standard_normal(n)
        n_spikes = max(1, int(round(duration * 4)))
        pos = rng.choice(n, size=min(n_spikes, n), replace=False)
        x[pos] = level * rng.choice([-1.0, 1.0], size=pos.shape[0])
    else:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    return SampledSignal(x, rate_hz)
