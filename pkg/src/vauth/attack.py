"""Attack scenarios against the matcher and the segment-count bound check.

Three adversaries are modelled. A mangled-voice attacker plays audio rebuilt
from MFCCs. A replay attacker plays another recording of the same speaker,
and an impersonator plays a recording of a different speaker. An injection
attacker induces energy in the body sensor while the wearer is silent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, idct
from scipy.signal.windows import hann

from .decision import ClassifierModel, hoeffding_bound
from .errors import BoundInapplicable, InputError, InvalidConfig, SignalTooShort
from .pipeline import DEFAULT_CONFIG, PipelineConfig, match_prepared, prepare_channel
from .signal_core import SampledSignal

# power floor of the log-mel spectrum; coefficients are log(1 + power / floor)
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccParams:
    hop_samples: int = 256
    window_samples: int = 512
    n_coeffs: int = 77
    n_mel_bands: int = 30
    rate_hz: float = 16000.0

    def __post_init__(self):
        if not 0 < self.hop_samples <= self.window_samples:
            raise InvalidConfig("need 0 < hop_samples <= window_samples")
        if self.n_coeffs < 1 or self.n_mel_bands < 1:
            raise InvalidConfig("n_coeffs and n_mel_bands must be positive")

    @property
    def effective_coeffs(self) -> int:
        # a DCT of n bands has only n coefficients; the rest carry nothing
        return min(self.n_coeffs, self.n_mel_bands)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, n_fft: int, rate_hz: float) -> np.ndarray:
    """Triangular filters, equally spaced on the mel scale from 0 to Nyquist."""
    bins = np.fft.rfftfreq(n_fft, 1.0 / rate_hz)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(rate_hz / 2), n_bands + 2))
    fb = np.zeros((n_bands, bins.shape[0]))
    for k in range(n_bands):
        lo, c, hi = edges[k], edges[k + 1], edges[k + 2]
        up = (bins - lo) / (c - lo)
        down = (hi - bins) / (hi - c)
        fb[k] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _frames(x: np.ndarray, p: MfccParams) -> np.ndarray:
    return sliding_window_view(x, p.window_samples)[:: p.hop_samples]


def _stft(x: np.ndarray, p: MfccParams) -> np.ndarray:
    return np.fft.rfft(_frames(x, p) * hann(p.window_samples, sym=False), axis=1)


def _istft(spec: np.ndarray, p: MfccParams) -> np.ndarray:
    win = hann(p.window_samples, sym=False)
    frames = np.fft.irfft(spec, p.window_samples, axis=1) * win
    n = (spec.shape[0] - 1) * p.hop_samples + p.window_samples
    out = np.zeros(n)
    norm = np.zeros(n)
    for k, fr in enumerate(frames):
        s = k * p.hop_samples
        out[s:s + p.window_samples] += fr
        norm[s:s + p.window_samples] += win * win
    return out / np.maximum(norm, 1e-8)


def mel_power(signal: SampledSignal, p: MfccParams) -> np.ndarray:
    """Mel-band power per frame, shape (frames, n_mel_bands)."""
    if signal.rate_hz != p.rate_hz:
        raise InvalidConfig(f"signal rate {signal.rate_hz} != MFCC rate {p.rate_hz}")
    if len(signal) < p.window_samples:
        raise SignalTooShort(f"{len(signal)} samples is shorter than one {p.window_samples}-sample window")
    power = np.abs(_stft(signal.samples, p)) ** 2
    return power @ mel_filterbank(p.n_mel_bands, p.window_samples, p.rate_hz).T


def mfcc_extract(signal: SampledSignal, p: MfccParams = MfccParams()) -> np.ndarray:
    """MFCC matrix of shape (frames, ``p.effective_coeffs``)."""
    logmel = np.log1p(mel_power(signal, p) / LOG_FLOOR)
    return dct(logmel, type=2, norm="ortho", axis=1)[:, : p.effective_coeffs]


def mfcc_invert(coeffs: np.ndarray, p: MfccParams = MfccParams(), phase_iters: int = 32,
                n_samples: int | None = None) -> SampledSignal:
    """Rebuild audio from MFCCs.

    The log-mel spectrum is recovered by inverse DCT (missing coefficients
    taken as zero), mapped back to linear frequency with the filterbank
    pseudo-inverse and given a phase by ``phase_iters`` rounds of
    magnitude-consistent STFT inversion, starting from zero phase.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] > p.n_mel_bands:
        raise ValueError(f"expected (frames, <= {p.n_mel_bands}) coefficients, got {c.shape}")
    full = np.zeros((c.shape[0], p.n_mel_bands))
    full[:, : c.shape[1]] = c
    mel = np.expm1(idct(full, type=2, norm="ortho", axis=1)) * LOG_FLOOR
    fb = mel_filterbank(p.n_mel_bands, p.window_samples, p.rate_hz)
    power = np.maximum(mel, 0.0) @ np.linalg.pinv(fb).T
    mag = np.sqrt(np.maximum(power, 0.0))

    spec = mag.astype(np.complex128)
    x = _istft(spec, p)
    for _ in range(phase_iters):
        est = _stft(x, p)
        spec = mag * np.exp(1j * np.angle(est))
        x = _istft(spec, p)
    if n_samples is not None:
        x = np.concatenate([x, np.zeros(max(0, n_samples - x.shape[0]))])[:n_samples]
    return SampledSignal(x, p.rate_hz)


def envelope_correlation(original: SampledSignal, rebuilt: SampledSignal, p: MfccParams,
                         n_bands: int = 64, dynamic_db: float = 30.0) -> float:
    """Mean per-frame correlation of fine log-mel spectra over the loud frames.

    The comparison uses its own ``n_bands``-band analysis, independent of the
    band count used to rebuild the signal.
    """
    q = MfccParams(p.hop_samples, p.window_samples, n_bands, n_bands, p.rate_hz)
    n = min(len(original), len(rebuilt))
    a = mel_power(original.with_samples(original.samples[:n]), q)
    b = mel_power(rebuilt.with_samples(rebuilt.samples[:n]), q)
    energy = a.sum(axis=1)
    loud = energy > energy.max() * 10 ** (-dynamic_db / 10)
    la = np.log(a[loud] + LOG_FLOOR)
    lb = np.log(b[loud] + LOG_FLOOR)
    vals = [np.corrcoef(x, y)[0, 1] for x, y in zip(la, lb) if np.std(x) > 0 and np.std(y) > 0]
    return float(np.mean(vals)) if vals else float("nan")


# ---- attack scenarios -----------------------------------------------------------

@dataclass
class AttackReport:
    scenario: str
    trials: int
    accepted: int
    details: list = field(default_factory=list)

    @property
    def rejection_rate(self) -> float:
        return 1.0 - self.accepted / self.trials if self.trials else float("nan")

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.trials if self.trials else float("nan")

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "trials": self.trials, "accepted": self.accepted,
                "rejection_rate": self.rejection_rate if self.trials else None,
                "details": self.details}


def _prep(sig, channel, config):
    try:
        return prepare_channel(sig, channel, config)
    except InputError:
        return None


def _accepts(pa, pm, model, config) -> bool:
    if pa is None or pm is None:
        return False
    return match_prepared(pa, pm, model, config).is_match


def run_mangled_attack(corpus: list, model: ClassifierModel | None, bands=(15, 30),
                       config: PipelineConfig = DEFAULT_CONFIG, params: MfccParams | None = None,
                       phase_iters: int = 32) -> AttackReport:
    """Play MFCC-reconstructed versions of each genuine mic recording."""
    rep = AttackReport("Mangled", 0, 0)
    for k, pair in enumerate(corpus):
        pa = _prep(pair.acc, "acc", config)
        for nb in bands:
            p = params or MfccParams(rate_hz=pair.mic.rate_hz)
            p = MfccParams(p.hop_samples, p.window_samples, p.n_coeffs, int(nb), pair.mic.rate_hz)
            rebuilt = mfcc_invert(mfcc_extract(pair.mic, p), p, phase_iters, len(pair.mic))
            ok = _accepts(pa, _prep(rebuilt, "mic", config), model, config)
            rep.trials += 1
            rep.accepted += int(ok)
            rep.details.append({"utterance": k, "bands": int(nb), "accepted": ok})
    return rep


def run_control_arm(corpus: list, model: ClassifierModel | None,
                    config: PipelineConfig = DEFAULT_CONFIG) -> AttackReport:
    """Genuine pairs, unmodified: the acceptance a real user sees."""
    rep = AttackReport("Control", 0, 0)
    for k, pair in enumerate(corpus):
        ok = _accepts(_prep(pair.acc, "acc", config), _prep(pair.mic, "mic", config), model, config)
        rep.trials += 1
        rep.accepted += int(ok)
        rep.details.append({"utterance": k, "accepted": ok})
    return rep


def _cross(accs, mics, skip_same, model, config, scenario) -> AttackReport:
    pa = [_prep(p.acc, "acc", config) for p in accs]
    pm = [_prep(p.mic, "mic", config) for p in mics]
    rep = AttackReport(scenario, 0, 0)
    for i, a in enumerate(pa):
        for j, m in enumerate(pm):
            if skip_same and i == j:
                continue
            ok = _accepts(a, m, model, config)
            rep.trials += 1
            rep.accepted += int(ok)
            if ok:
                rep.details.append({"acc": accs[i].label, "mic": mics[j].label})
    return rep


def run_replay_attack(corpus: list, model: ClassifierModel | None,
                      config: PipelineConfig = DEFAULT_CONFIG) -> AttackReport:
    """Body channel of utterance A against a recording of utterance B, same speaker."""
    if len(corpus) < 2:
        raise ValueError("replay needs at least two utterances")
    return _cross(corpus, corpus, True, model, config, "Replay")


def run_impersonation_attack(victim: list, impostor: list, model: ClassifierModel | None,
                             config: PipelineConfig = DEFAULT_CONFIG) -> AttackReport:
    """Victim's body channel against every recording of another speaker."""
    return _cross(victim, impostor, False, model, config, "Impersonation")


def run_injection_attack(levels, mic_command: SampledSignal, model: ClassifierModel | None,
                         config: PipelineConfig = DEFAULT_CONFIG, kind: str = "white",
                         trials_per_level: int = 10, seed: int = 0,
                         sensor_floor: float = 1e-4) -> AttackReport:
    """Silent wearer, attacker-controlled mic, induced energy in the body sensor.

    For every level in ``levels`` the body channel is the sensor floor plus
    ``kind`` noise at that level, uncorrelated with the command.
    """
    from .synth import make_noise

    pm = _prep(mic_command, "mic", config)
    rep = AttackReport("AcousticInjection", 0, 0)
    dur = mic_command.duration
    for li, level in enumerate(np.atleast_1d(np.asarray(levels, dtype=float))):
        acc_n = 0
        for t in range(trials_per_level):
            s = int(np.random.SeedSequence([seed, li, t]).generate_state(1)[0])
            floor = make_noise("white", sensor_floor, dur, s, mic_command.rate_hz)
            x = floor.samples
            if level > 0:
                x = x + make_noise(kind, float(level), dur, s + 1, mic_command.rate_hz).samples
            ok = _accepts(_prep(SampledSignal(x, mic_command.rate_hz), "acc", config), pm, model, config)
            acc_n += int(ok)
        rep.trials += trials_per_level
        rep.accepted += acc_n
        rep.details.append({"level": float(level), "trials": trials_per_level, "accepted": acc_n})
    return rep


# ---- segment-count bound ----------------------------------------------------------

def fp_decay_montecarlo(score_dist, th: float, n_values=(1, 2, 4, 8, 16), trials: int = 100_000,
                        seed: int = 0) -> list[dict]:
    """Empirical P(mean of n i.i.d. scores > th) next to the Hoeffding bound.

    ``score_dist`` is a frozen ``scipy.stats`` distribution supported in
    [0, 1].
    """
    lo, hi = score_dist.support()
    if lo < 0 or hi > 1:
        raise ValueError("scores must be bounded in [0, 1]")
    mean = float(score_dist.mean())
    if th <= mean:
        raise BoundInapplicable(f"threshold {th} is not above the mean score {mean:.4f}")
    rng = np.random.default_rng(seed)
    rows = []
    for n in n_values:
        scores = score_dist.rvs(size=(trials, int(n)), random_state=rng)
        p = float(np.mean(scores.mean(axis=1) > th))
        rows.append({"n": int(n), "empirical_fp": p, "hoeffding_bound": hoeffding_bound(int(n), th, mean),
                     "mc_std_error": math.sqrt(p * (1 - p) / trials),
                     "trials": trials})
    return rows
