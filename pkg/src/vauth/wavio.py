"""Mono PCM WAV input/output (16-bit integer and 32-bit float)."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .signal_core import SampledSignal

PCM16_SCALE = 32768.0


def read_wav(path) -> SampledSignal:
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono WAV is supported, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return SampledSignal(x, float(rate))


def encode_pcm16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x) * PCM16_SCALE), -32768, 32767).astype(np.int16)


def write_wav(path, signal: SampledSignal, encoding: str = "pcm16") -> None:
    """Write ``signal``; the rate is rounded to an integer as WAV requires."""
    rate = int(round(signal.rate_hz))
    if encoding == "pcm16":
        data = encode_pcm16(signal.samples)
    elif encoding == "f32":
        data = signal.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    wavfile.write(path, rate, data)
