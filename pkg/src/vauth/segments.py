"""Per-segment analysis: split on the body-channel envelope and filter.

Each envelope run becomes a :class:`SegmentPair`. :func:`filter_segment`
applies the rules in a fixed order and records the first one that fails, so
every dropped segment carries its reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import NoPitch, NoSurvivingSegments, SegmentTooShort
from .pitch import DEFAULT_PITCH, GlottalPulseTrain, PitchConfig, extract_glottal_pulses, pitch_distance
from .signal_core import EnergyEnvelope, SampledSignal, xcorr_normalized


class Verdict(str, Enum):
    PENDING = "Pending"
    KEPT = "Kept"
    TOO_SHORT = "DroppedTooShort"
    NO_PULSES = "DroppedNoPulses"
    PITCH_RANGE = "DroppedPitchRange"
    PITCH_MISMATCH = "DroppedPitchMismatch"
    LOW_CORRELATION = "DroppedLowCorrelation"


@dataclass(frozen=True)
class RuleConfig:
    min_segment_sec: float = 0.02
    min_pulse_run_sec: float = 0.02
    # allowed mean glottal cycle of the body channel, seconds
    cycle_min_sec: float = 0.003
    cycle_max_sec: float = 0.0125
    pitch_distance_max: float = 0.25
    # segments with max |xcorr| at or below this are discarded
    corr_gate: float = 0.25
    f0_min_hz: float = 80.0
    f0_max_hz: float = 333.0
    pitch: PitchConfig = field(default_factory=PitchConfig)


DEFAULT_RULES = RuleConfig()


@dataclass(frozen=True, eq=False)
class SegmentPair:
    index: int
    acc: SampledSignal
    mic: SampledSignal
    start_sample: int
    end_sample: int
    acc_pulses: GlottalPulseTrain | None = None
    mic_pulses: GlottalPulseTrain | None = None
    verdict: Verdict = Verdict.PENDING
    max_xcorr: float = 0.0
    pitch_dist: float | None = None

    @property
    def rate_hz(self) -> float:
        return self.acc.rate_hz

    @property
    def start_sec(self) -> float:
        return self.start_sample / self.rate_hz

    @property
    def end_sec(self) -> float:
        return self.end_sample / self.rate_hz

    @property
    def duration(self) -> float:
        return (self.end_sample - self.start_sample) / self.rate_hz

    def to_record(self) -> dict:
        """JSON-ready diagnostic record."""

        def f0(train):
            return None if train is None or train.mean_cycle_sec <= 0 else train.f0_hz

        return {
            "index": self.index,
            "start_sec": self.start_sec,
            "end_sec": self.end_sec,
            "verdict": self.verdict.value,
            "max_xcorr": self.max_xcorr,
            "pitch_distance": self.pitch_dist,
            "acc_f0_hz": f0(self.acc_pulses),
            "mic_f0_hz": f0(self.mic_pulses),
            "acc_pulses": 0 if self.acc_pulses is None else len(self.acc_pulses),
            "mic_pulses": 0 if self.mic_pulses is None else len(self.mic_pulses),
            "acc_longest_run_sec": None if self.acc_pulses is None else self.acc_pulses.longest_run_sec,
        }


def _unit(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x)) if x.size else 0.0
    return x / peak if peak > 0 else x.copy()


def segment_signals(acc: SampledSignal, mic: SampledSignal, env: EnergyEnvelope) -> list[SegmentPair]:
    """One pair per maximal envelope run, each channel scaled to unit peak."""
    if len(acc) != len(mic) or acc.rate_hz != mic.rate_hz:
        raise ValueError("acc and mic must be aligned: equal length and rate")
    n = len(acc)
    pairs = []
    for k, (s, e) in enumerate(env.runs()):
        a, b = s * env.frame_len, min(e * env.frame_len, n)
        if b <= a:
            continue
        pairs.append(SegmentPair(
            index=len(pairs),
            acc=acc.with_samples(_unit(acc.samples[a:b])),
            mic=mic.with_samples(_unit(mic.samples[a:b])),
            start_sample=a, end_sample=b))
    return pairs


def _pulses(sig: SampledSignal, cfg: RuleConfig) -> GlottalPulseTrain | None:
    try:
        return extract_glottal_pulses(sig, cfg.f0_min_hz, cfg.f0_max_hz, cfg.pitch)
    except SegmentTooShort:
        return None


def filter_segment(pair: SegmentPair, config: RuleConfig = DEFAULT_RULES) -> SegmentPair:
    """Judge one segment pair; the first failing rule sets the verdict."""
    if pair.duration < config.min_segment_sec:
        return replace(pair, verdict=Verdict.TOO_SHORT)

    pa = _pulses(pair.acc, config)
    pm = _pulses(pair.mic, config)
    pair = replace(pair, acc_pulses=pa, mic_pulses=pm)
    for train in (pa, pm):
        if train is None or len(train) == 0 or train.longest_run_sec < config.min_pulse_run_sec:
            return replace(pair, verdict=Verdict.NO_PULSES)

    if not config.cycle_min_sec <= pa.mean_cycle_sec <= config.cycle_max_sec:
        return replace(pair, verdict=Verdict.PITCH_RANGE)

    try:
        dist = pitch_distance(pa, pm)
    except NoPitch:
        return replace(pair, verdict=Verdict.PITCH_MISMATCH)
    pair = replace(pair, pitch_dist=dist)
    if dist > config.pitch_distance_max:
        return replace(pair, verdict=Verdict.PITCH_MISMATCH)

    if pair.acc.energy() == 0 or pair.mic.energy() == 0:
        return replace(pair, verdict=Verdict.LOW_CORRELATION)
    m = float(np.max(np.abs(xcorr_normalized(pair.acc, pair.mic).values)))
    pair = replace(pair, max_xcorr=m)
    if m <= config.corr_gate:
        return replace(pair, verdict=Verdict.LOW_CORRELATION)
    return replace(pair, verdict=Verdict.KEPT)


def assemble_surviving(pairs: list[SegmentPair], n_samples: int | None = None
                       ) -> tuple[SampledSignal, SampledSignal]:
    """Rebuild full-length signals from the kept segments only.

    Dropped regions and gaps are zero, so the kept segments stay at their
    original positions. ``n_samples`` defaults to the end of the last pair.
    """
    kept = [p for p in pairs if p.verdict == Verdict.KEPT]
    if not kept:
        raise NoSurvivingSegments("no segment survived the per-segment rules")
    if n_samples is None:
        n_samples = max(p.end_sample for p in pairs)
    acc = np.zeros(n_samples)
    mic = np.zeros(n_samples)
    for p in sorted(kept, key=lambda q: q.start_sample):
        acc[p.start_sample:p.end_sample] = p.acc.samples
        mic[p.start_sample:p.end_sample] = p.mic.samples
    rate = kept[0].rate_hz
    return SampledSignal(acc, rate), SampledSignal(mic, rate)
