"""Mono WAV reading/writing (16-bit PCM and 32-bit float) via scipy."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .errors import DataError
from .stft import Waveform

__all__ = ["read_wav", "write_wav"]

_PCM16_SCALE = 32768.0


def read_wav(path) -> Waveform:
    """Read a mono WAV file; integer PCM is scaled to [-1, 1)."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono WAV, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV file as 32-bit float (default) or 16-bit PCM."""
    if fmt == "float32":
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(w.samples, -1.0, 32767.0 / _PCM16_SCALE)
        wavfile.write(
            path, w.sample_rate, np.round(clipped * _PCM16_SCALE).astype(np.int16)
        )
    else:
        raise DataError(f"unsupported WAV format {fmt!r}")
