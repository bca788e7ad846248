"""End-to-end matching of a body-channel recording against a microphone recording."""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .decision import (ClassifierModel, FeatureVector, MatchDecision, build_feature_vector,
                       classify, threshold_rule)
from .errors import DegenerateSignal, InputError, InvalidConfig, NoSurvivingSegments
from .pitch import PitchConfig
from .segments import RuleConfig, SegmentPair, Verdict, assemble_surviving, filter_segment, segment_signals
from .signal_core import (SampledSignal, align, apply_envelope, clip_spikes, energy_envelope,
                          highpass_filter, normalize_unity, resample, xcorr_normalized)

REPORT_SCHEMA = "vauth.match_report/1"
NO_ENVELOPE = "NoEnvelope"
NO_SURVIVORS = "NoSurvivingSegments"
CLASSIFIER_REJECT = "ClassifierReject"
MIN_INPUT_SEC = 0.1


@dataclass(frozen=True)
class PipelineConfig:
    rate_hz: float = 8000.0
    highpass_hz: float = 100.0
    spike_window_sec: float = 0.5
    spike_k_sigma: float = 6.0
    envelope_frame_sec: float = 0.01
    envelope_threshold: float = 0.05
    # absolute RMS floor of the body channel, in input units
    envelope_floor_rms: float = 0.02
    envelope_min_gap_sec: float = 0.02
    # alignment search bound; None searches every lag
    align_max_lag_sec: float | None = 0.25
    # zeros placed on both sides of the kept span before the final correlation
    xcorr_guard_sec: float = 1.0
    rules: RuleConfig = field(default_factory=RuleConfig)
    decision_mode: str = "classifier"
    decision_threshold: float = 0.4

    def __post_init__(self):
        if self.decision_mode not in ("classifier", "threshold"):
            raise InvalidConfig(f"unknown decision_mode {self.decision_mode!r}")
        if not 0 < self.envelope_threshold < 1:
            raise InvalidConfig("envelope_threshold must be in (0, 1)")
        if not 0 < self.rules.f0_min_hz < self.rules.f0_max_hz:
            raise InvalidConfig("need 0 < f0_min < f0_max")
        if self.align_max_lag_sec is not None and self.align_max_lag_sec < 0:
            raise InvalidConfig("align_max_lag_sec must be non-negative or None")
        if self.xcorr_guard_sec < 0:
            raise InvalidConfig("xcorr_guard_sec must be non-negative")
        if self.highpass_hz >= self.rate_hz / 2:
            raise InvalidConfig("highpass cutoff must be below the working Nyquist rate")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        rules = dict(d.pop("rules", {}) or {})
        pitch = PitchConfig(**(rules.pop("pitch", {}) or {}))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(rules=RuleConfig(pitch=pitch, **rules), **d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


DEFAULT_CONFIG = PipelineConfig()


@dataclass(eq=False)
class MatchReport:
    decision: MatchDecision | None
    reason: str | None
    cleaned_mic: SampledSignal
    segments: list[dict]
    stage_timings_ms: dict
    config_digest: str
    alignment_shift: int = 0
    segment_pairs: list[SegmentPair] = field(default_factory=list, repr=False)

    @property
    def is_match(self) -> bool:
        return self.decision is not None and self.decision.is_match

    @property
    def verdicts(self) -> list[str]:
        return [s["verdict"] for s in self.segments]

    def to_json(self, include_audio: bool = False) -> dict:
        out = {
            "schema": REPORT_SCHEMA,
            "is_match": self.is_match,
            "reason": self.reason,
            "decision": None if self.decision is None else self.decision.to_dict(),
            "alignment_shift_samples": self.alignment_shift,
            "segments": self.segments,
            "stage_timings_ms": self.stage_timings_ms,
            "config_digest": self.config_digest,
            "cleaned_mic": {"rate_hz": self.cleaned_mic.rate_hz,
                            "n_samples": len(self.cleaned_mic)},
        }
        if include_audio:
            raw = self.cleaned_mic.samples.astype("<f4").tobytes()
            out["cleaned_mic"]["f32le_base64"] = base64.b64encode(raw).decode("ascii")
        return out

    @classmethod
    def from_json(cls, d: dict) -> "MatchReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unknown report schema {d.get('schema')!r}")
        dec = d.get("decision")
        decision = None if dec is None else MatchDecision(bool(dec["is_match"]), float(dec["score"]),
                                                          float(dec["probability"]),
                                                          float(dec["max_xcorr"]))
        cm = d["cleaned_mic"]
        if "f32le_base64" in cm:
            x = np.frombuffer(base64.b64decode(cm["f32le_base64"]), dtype="<f4").astype(np.float64)
        else:
            x = np.zeros(0)
        return cls(decision, d.get("reason"), SampledSignal(x, cm["rate_hz"]), list(d["segments"]),
                   dict(d["stage_timings_ms"]), d["config_digest"], int(d["alignment_shift_samples"]))


@dataclass(frozen=True, eq=False)
class Prepared:
    """One channel after the per-channel pre-processing stages."""

    signal: SampledSignal
    # factor that maps normalized amplitude back to input units
    gain: float
    timings: dict


def _check_input(sig: SampledSignal, name: str):
    if len(sig) < MIN_INPUT_SEC * sig.rate_hz:
        raise InputError(f"{name} signal shorter than {MIN_INPUT_SEC * 1e3:.0f} ms")


def prepare_channel(sig: SampledSignal, channel: str, config: PipelineConfig = DEFAULT_CONFIG
                    ) -> Prepared:
    """Highpass (body channel only), resample, clip spikes and normalize."""
    _check_input(sig, channel)
    t = {}
    t0 = time.perf_counter()
    if channel == "acc":
        sig = highpass_filter(sig, config.highpass_hz)
    t["highpass"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    sig = resample(sig, config.rate_hz)
    t["resample"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    sig = clip_spikes(sig, max(8, int(round(config.spike_window_sec * config.rate_hz))),
                      config.spike_k_sigma)
    t["clip_spikes"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    gain = float(np.max(np.abs(sig.samples)))
    try:
        sig = normalize_unity(sig)
    except DegenerateSignal as exc:
        raise InputError(f"{channel} channel: {exc}") from exc
    t["normalize"] = (time.perf_counter() - t0) * 1e3
    return Prepared(sig, gain, t)


@dataclass(eq=False)
class _Analysis:
    shift: int
    pairs: list
    acc: SampledSignal | None = None
    mic: SampledSignal | None = None
    reason: str | None = None
    fv: FeatureVector | None = None
    n_samples: int = 0


def align_prepared(pa: Prepared, pm: Prepared, config: PipelineConfig = DEFAULT_CONFIG):
    max_lag = None
    if config.align_max_lag_sec is not None:
        max_lag = int(round(config.align_max_lag_sec * config.rate_hz))
    return align(pa.signal, pm.signal, max_lag)


def guarded_span(acc: SampledSignal, mic: SampledSignal, pairs: list, guard: int
                 ) -> tuple[SampledSignal, SampledSignal]:
    """Cut both signals to the span of the kept segments, then pad ``guard`` zeros per side.

    The correlation input then does not depend on how much silence or
    rejected material surrounds the kept speech.
    """
    kept = [p for p in pairs if p.verdict == Verdict.KEPT]
    s = min(p.start_sample for p in kept)
    e = max(p.end_sample for p in kept)
    pad = np.zeros(guard)
    return (acc.with_samples(np.concatenate([pad, acc.samples[s:e], pad])),
            mic.with_samples(np.concatenate([pad, mic.samples[s:e], pad])))


def _analyze(pa: Prepared, pm: Prepared, config: PipelineConfig, t: dict) -> _Analysis:
    t0 = time.perf_counter()
    shift, acc, mic = align_prepared(pa, pm, config)
    t["align"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    frame = max(1, int(round(config.envelope_frame_sec * config.rate_hz)))
    env = energy_envelope(acc, frame, config.envelope_threshold,
                          config.envelope_floor_rms / pa.gain, config.envelope_min_gap_sec)
    mic = apply_envelope(env, mic)
    t["envelope"] = (time.perf_counter() - t0) * 1e3
    res = _Analysis(shift, [], n_samples=len(acc))
    if not env.mask.any():
        res.reason = NO_ENVELOPE
        return res

    t0 = time.perf_counter()
    pairs = [filter_segment(p, config.rules) for p in segment_signals(acc, mic, env)]
    res.pairs = pairs
    t["segments"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    try:
        a, m = assemble_surviving(pairs, len(acc))
    except NoSurvivingSegments:
        res.reason = NO_SURVIVORS
        return res
    res.acc, res.mic = a, m
    fa, fm = guarded_span(a, m, pairs, int(round(config.xcorr_guard_sec * config.rate_hz)))
    res.fv = build_feature_vector(xcorr_normalized(fa, fm))
    t["features"] = (time.perf_counter() - t0) * 1e3
    return res


def extract_features(acc: SampledSignal, mic: SampledSignal, config: PipelineConfig = DEFAULT_CONFIG
                     ) -> tuple[FeatureVector | None, str | None]:
    """Feature vector of a pair, or ``(None, reason)`` when nothing survives."""
    try:
        pa = prepare_channel(acc, "acc", config)
        pm = prepare_channel(mic, "mic", config)
    except InputError as exc:
        return None, f"InputError: {exc}"
    res = _analyze(pa, pm, config, {})
    return res.fv, res.reason


def match_prepared(pa: Prepared, pm: Prepared, model: ClassifierModel | None,
                   config: PipelineConfig = DEFAULT_CONFIG) -> MatchReport:
    """:func:`match` on channels that already went through :func:`prepare_channel`."""
    if config.decision_mode == "classifier" and model is None:
        raise InvalidConfig("classifier decision mode needs a model")
    t = {f"acc_{k}": v for k, v in pa.timings.items()}
    t.update({f"mic_{k}": v for k, v in pm.timings.items()})
    res = _analyze(pa, pm, config, t)
    records = [p.to_record() for p in res.pairs]
    empty = SampledSignal.empty(config.rate_hz)
    if res.fv is None:
        return MatchReport(None, res.reason, empty, records, t, config.digest(), res.shift, res.pairs)

    t0 = time.perf_counter()
    if config.decision_mode == "threshold":
        m = min(abs(res.fv.center_value), 1.0)
        decision = MatchDecision(threshold_rule(m, config.decision_threshold),
                                 m - config.decision_threshold, m, res.fv.center_value)
    else:
        decision = classify(model, res.fv)
    t["classify"] = (time.perf_counter() - t0) * 1e3
    if decision.is_match:
        return MatchReport(decision, None, res.mic, records, t, config.digest(), res.shift, res.pairs)
    return MatchReport(decision, CLASSIFIER_REJECT, empty, records, t, config.digest(), res.shift,
                       res.pairs)


def match(acc: SampledSignal, mic: SampledSignal, model: ClassifierModel | None,
          config: PipelineConfig = DEFAULT_CONFIG) -> MatchReport:
    """Decide whether ``mic`` carries the speech registered by the body channel ``acc``.

    Inputs may have any sample rates and must each be at least 100 ms long.
    Unusable inputs (too short, all zero) raise :class:`InputError`; every
    other failure is reported as a non-match with a reason.
    """
    pa = prepare_channel(acc, "acc", config)
    pm = prepare_channel(mic, "mic", config)
    return match_prepared(pa, pm, model, config)


# ---- batch evaluation ----------------------------------------------------------

@dataclass
class BatchResult:
    reports: list  # reports[i][j]: acc i against mic j; None when the inputs were unusable
    classes: list
    table: list[dict]

    @property
    def matrix(self) -> np.ndarray:
        n = len(self.reports)
        out = np.zeros((n, n), dtype=bool)
        for i, row in enumerate(self.reports):
            for j, r in enumerate(row):
                out[i, j] = r is not None and r.is_match
        return out


def _rates(mat: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> dict:
    sub = mat[np.ix_(rows, cols)]
    diag = [(r, c) for a, r in enumerate(rows) for b, c in enumerate(cols) if r == c]
    pos = [mat[r, c] for r, c in diag]
    n_neg = sub.size - len(pos)
    fp = (sub.sum() - sum(pos)) / n_neg if n_neg else float("nan")
    return {"tp": float(np.mean(pos)) if pos else None, "fp": float(fp),
            "n_true": len(pos), "n_false": int(n_neg)}


def tp_fp_table(matched: np.ndarray, classes: list[str] | None = None) -> list[dict]:
    """Rows of TP/FP rates per (mic class, acc class) block plus an "all" row."""
    n = matched.shape[0]
    if n == 0:
        return []
    idx = np.arange(n)
    rows = []
    if classes is not None:
        cls = np.array(classes)
        kinds = sorted(set(classes))
        for mk in kinds:
            for ak in kinds:
                r = _rates(matched, idx[cls == ak], idx[cls == mk])
                rows.append({"mic": mk, "acc": ak, **r})
    rows.append({"mic": "all", "acc": "all", **_rates(matched, idx, idx)})
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'mic':<12}{'acc':<12}{'TP (%)':>8}{'FP (%)':>8}"]
    for r in rows:
        tp = "-" if r["tp"] is None else f"{100 * r['tp']:.0f}"
        fp = "-" if r["fp"] != r["fp"] else f"{100 * r['fp']:.1f}"
        lines.append(f"{r['mic']:<12}{r['acc']:<12}{tp:>8}{fp:>8}")
    return "\n".join(lines)


def batch_match(pairs: list, model: ClassifierModel | None, config: PipelineConfig = DEFAULT_CONFIG,
                classes: list[str] | None = None) -> BatchResult:
    """Match every acc recording against every mic recording.

    ``pairs`` holds objects with ``acc`` and ``mic`` attributes; entry ``i``
    is the only true partner of acc ``i``. When ``classes`` is omitted it is
    read from ``truth["class"]`` if every pair carries one.
    """
    if classes is None and pairs and all("class" in getattr(p, "truth", {}) for p in pairs):
        classes = [p.truth["class"] for p in pairs]

    def prep(sig, ch):
        try:
            return prepare_channel(sig, ch, config)
        except InputError:
            return None

    accs = [prep(p.acc, "acc") for p in pairs]
    mics = [prep(p.mic, "mic") for p in pairs]
    reports = []
    for pa in accs:
        row = []
        for pm in mics:
            row.append(None if pa is None or pm is None else match_prepared(pa, pm, model, config))
        reports.append(row)
    res = BatchResult(reports, classes or [], [])
    res.table = tp_fp_table(res.matrix, classes)
    return res
