"""Feature vectors, the linear max-margin classifier and its file format."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateTrainingSet, ModelFormatError
from .signal_core import CrossCorrelation, SampledSignal, xcorr_normalized
from .smo import platt_calibration, smo_dual

log = logging.getLogger(__name__)

FV_LEN = 1001
HALF = 500
# 0-based position of the correlation peak inside a feature vector
CENTER = HALF


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (FV_LEN,):
            raise ValueError(f"feature vector must have {FV_LEN} values, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def center_value(self) -> float:
        return float(self.values[CENTER])

    @classmethod
    def zeros(cls) -> "FeatureVector":
        return cls(np.zeros(FV_LEN))


def build_feature_vector(h: CrossCorrelation) -> FeatureVector:
    """Resample ``h`` to 500 points on each side of its absolute maximum.

    The left half samples lags ``n * t_m / 500`` for ``n = 0..499`` and the
    right half ``t_m + n * (t_e - 1 - t_m) / 500`` for ``n = 1..500``, with
    linear interpolation between lags. The peak itself lands at index 500
    (0-based). A side with no lags to sample is zero-filled.

    The polarity of the two sensors is arbitrary, so the vector is flipped
    when needed to make the center value ``+max|h|``.
    """
    v = np.asarray(h.values, dtype=np.float64)
    te = v.shape[0]
    if te == 0:
        raise ValueError("cross-correlation is empty")
    out = np.zeros(FV_LEN)
    tm = int(np.argmax(np.abs(v)))
    if v[tm] < 0:
        v = -v
    out[CENTER] = v[tm]
    grid = np.arange(te, dtype=np.float64)
    if tm > 0:
        out[:CENTER] = np.interp(np.arange(HALF) * (tm / HALF), grid, v)
    if tm < te - 1:
        out[CENTER + 1:] = np.interp(tm + np.arange(1, HALF + 1) * ((te - 1 - tm) / HALF), grid, v)
    return FeatureVector(out)


@dataclass(frozen=True)
class LabeledExample:
    fv: FeatureVector
    label: int
    source: tuple

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    tol: float = 1e-3
    max_passes: int = 10
    max_sweeps: int = 2000
    seed: int = 0


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    weights: np.ndarray
    bias: float
    cal_slope: float
    cal_intercept: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (FV_LEN,) or not np.all(np.isfinite(w)):
            raise ValueError(f"weights must be {FV_LEN} finite values")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        for name in ("bias", "cal_slope", "cal_intercept"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, val)

    def decision_value(self, fv: FeatureVector) -> float:
        return float(np.dot(self.weights, fv.values) + self.bias)

    def same_as(self, other: "ClassifierModel") -> bool:
        """Bit-exact equality of parameters and metadata."""
        return (self.weights.tobytes() == other.weights.tobytes()
                and struct.pack("<3d", self.bias, self.cal_slope, self.cal_intercept)
                == struct.pack("<3d", other.bias, other.cal_slope, other.cal_intercept)
                and self.meta == other.meta)


@dataclass(frozen=True)
class MatchDecision:
    is_match: bool
    score: float
    probability: float
    max_xcorr: float

    def to_dict(self) -> dict:
        return {"is_match": self.is_match, "score": self.score,
                "probability": self.probability, "max_xcorr": self.max_xcorr}


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return float(ez / (1.0 + ez))


def classify(model: ClassifierModel, fv: FeatureVector) -> MatchDecision:
    score = model.decision_value(fv)
    prob = float(_logistic(model.cal_slope * score + model.cal_intercept))
    return MatchDecision(score > 0, score, prob, fv.center_value)


def threshold_rule(m: float, th: float) -> bool:
    """Binary matching on the correlation peak: true iff ``th < m``."""
    if m < 0 or m > 1 + 1e-9:
        raise ValueError(f"correlation peak {m} outside [0, 1]")
    return m > th


def train_classifier(examples: list[LabeledExample], hyper: TrainConfig = TrainConfig()
                     ) -> ClassifierModel:
    """Linear soft-margin SVM by SMO, followed by logistic calibration."""
    labels = np.array([e.label for e in examples], dtype=int)
    if labels.size == 0 or labels.min() == labels.max():
        raise DegenerateTrainingSet("training needs both positive and negative examples")
    X = np.stack([e.fv.values for e in examples])
    y = np.where(labels == 1, 1.0, -1.0)
    K = X @ X.T
    alpha, b = smo_dual(K, y, hyper.C, hyper.tol, hyper.max_passes, hyper.max_sweeps, hyper.seed)
    w = (alpha * y) @ X
    scores = X @ w + b
    slope, intercept = platt_calibration(scores, labels)
    acc = float(np.mean((scores > 0) == (labels == 1)))
    digest = hashlib.sha256(X.tobytes() + labels.tobytes()).hexdigest()[:16]
    meta = {
        "n_examples": int(labels.size),
        "n_positive": int(labels.sum()),
        "n_negative": int(labels.size - labels.sum()),
        "n_support": int(np.sum(alpha > 1e-8)),
        "train_accuracy": acc,
        "hyper": {"C": hyper.C, "tol": hyper.tol, "max_passes": hyper.max_passes, "seed": hyper.seed},
        "data_digest": digest,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return ClassifierModel(w, b, slope, intercept, meta)


def training_accuracy(model: ClassifierModel, examples: list[LabeledExample]) -> float:
    hits = [classify(model, e.fv).is_match == bool(e.label) for e in examples]
    return float(np.mean(hits)) if hits else float("nan")


def build_training_set(acc_recordings: list[SampledSignal], mic_recordings: list[SampledSignal],
                       minority_replication: int = 5, config=None, bank_size: int | None = 44
                       ) -> list[LabeledExample]:
    """All-pairs training set: acc ``i`` against mic ``j``, positive iff ``i == j``.

    Pairs the pipeline cannot score get a zero feature vector. Each positive
    appears ``minority_replication`` times in total.
    """
    from .pipeline import DEFAULT_CONFIG, extract_features

    if len(acc_recordings) != len(mic_recordings):
        raise ValueError("need the same number of acc and mic recordings")
    if bank_size is not None and len(acc_recordings) != bank_size:
        raise ValueError(f"expected a bank of {bank_size} recordings, got {len(acc_recordings)}")
    if minority_replication < 1:
        raise ValueError("minority_replication must be at least 1")
    config = config or DEFAULT_CONFIG
    out = []
    for i, acc in enumerate(acc_recordings):
        for j, mic in enumerate(mic_recordings):
            fv, reason = extract_features(acc, mic, config)
            if fv is None:
                log.info("pair (%d, %d): %s, using zero vector", i, j, reason)
                fv = FeatureVector.zeros()
            ex = LabeledExample(fv, int(i == j), (i, j))
            out.extend([ex] * (minority_replication if i == j else 1))
    return out


def write_training_csv(examples: list[LabeledExample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{k}" for k in range(FV_LEN)] + ["label", "acc_id", "mic_id"])
        for e in examples:
            w.writerow([repr(float(x)) for x in e.fv.values] + [e.label, *e.source])


def read_training_csv(path) -> list[LabeledExample]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            fv = FeatureVector(np.array(row[:FV_LEN], dtype=np.float64))
            out.append(LabeledExample(fv, int(row[FV_LEN]), (int(row[FV_LEN + 1]), int(row[FV_LEN + 2]))))
    return out


# ---- model file -------------------------------------------------------------

MAGIC = b"VAMD"
FORMAT_VERSION = 1


def model_to_bytes(model: ClassifierModel) -> bytes:
    meta = json.dumps(model.meta, sort_keys=True).encode("utf-8")
    body = b"".join([
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, FV_LEN),
        model.weights.astype("<f8").tobytes(),
        struct.pack("<3d", model.bias, model.cal_slope, model.cal_intercept),
        struct.pack("<I", len(meta)),
        meta,
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(data: bytes) -> ClassifierModel:
    head = 4 + 8
    if len(data) < head or data[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version}, expected {FORMAT_VERSION}")
    if n != FV_LEN:
        raise ModelFormatError(f"model has {n} weights, expected {FV_LEN}")
    fixed = head + 8 * n + 24 + 4
    if len(data) < fixed + 4:
        raise ModelFormatError("model file truncated")
    (meta_len,) = struct.unpack_from("<I", data, fixed - 4)
    end = fixed + meta_len
    if len(data) != end + 4:
        raise ModelFormatError("model file truncated or has trailing bytes")
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) != crc:
        raise ModelFormatError("model checksum mismatch")
    w = np.frombuffer(data, dtype="<f8", count=n, offset=head).astype(np.float64)
    bias, slope, intercept = struct.unpack_from("<3d", data, head + 8 * n)
    try:
        meta = json.loads(data[fixed:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"bad model metadata: {exc}") from exc
    try:
        return ClassifierModel(w, bias, slope, intercept, meta)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(model: ClassifierModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> ClassifierModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model: {exc}") from exc
    return model_from_bytes(data)


# ---- analysis helpers ---------------------------------------------------------

def segment_bound(f_segments: list[np.ndarray], g_segments: list[np.ndarray]) -> dict:
    """Upper bound on the overall correlation peak of slot-separated segments.

    Segment ``k`` of each signal is assumed to sit in slot ``k``, with slots
    at least twice as long as any segment, so at any lag only segment pairs
    with the same slot offset ``d = j - i`` overlap. The bound for offset
    ``d`` is ``sum_i m_ij * e_ij / E`` with ``m_ij`` the normalized
    correlation peak of the pair, ``e_ij`` the geometric mean of their
    energies and ``E`` the geometric mean of the total energies.
    """
    n = len(f_segments)
    if n == 0 or n != len(g_segments):
        raise ValueError("need the same positive number of segments on both sides")
    ef = np.array([float(np.dot(s, s)) for s in f_segments])
    eg = np.array([float(np.dot(s, s)) for s in g_segments])
    E = np.sqrt(ef.sum() * eg.sum())
    m = np.zeros((n, n))
    e = np.sqrt(np.outer(ef, eg))
    for i, fs in enumerate(f_segments):
        for j, gs in enumerate(g_segments):
            if e[i, j] > 0:
                m[i, j] = np.max(np.abs(xcorr_normalized(SampledSignal(fs, 1.0),
                                                         SampledSignal(gs, 1.0)).values))
    terms = {}
    for d in range(-(n - 1), n):
        terms[d] = float(sum(m[i, i + d] * e[i, i + d] for i in range(n) if 0 <= i + d < n) / E)
    return {"m": m, "e": e, "E": float(E), "terms": terms, "bound": max(terms.values())}


def hoeffding_bound(n: int, th: float, mean: float) -> float:
    """``exp(-2 n (th - mean)^2)``, valid for scores bounded in [0, 1]."""
    return float(np.exp(-2.0 * n * (th - mean) ** 2))
