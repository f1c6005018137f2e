"""Minimal WAV decoding (PCM integer formats) to mono float64 in [-1, 1]."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import AudioDecodeError

_PCM_DTYPES = {1: np.uint8, 2: np.dtype("<i2"), 4: np.dtype("<i4")}


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode a PCM WAV file; returns (mono samples in [-1, 1], sample_rate)."""
    try:
        with wave.open(str(Path(path)), "rb") as fh:
            n_channels = fh.getnchannels()
            sample_width = fh.getsampwidth()
            sample_rate = fh.getframerate()
            n_frames = fh.getnframes()
            raw = fh.readframes(n_frames)
    except (wave.Error, EOFError, OSError) as exc:
        raise AudioDecodeError(f"cannot decode {path}: {exc}") from None

    if sample_width == 3:  # 24-bit PCM: widen to 32-bit
        as_bytes = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        padded = np.zeros((as_bytes.shape[0], 4), dtype=np.uint8)
        padded[:, 1:] = as_bytes
        samples = padded.view("<i4").ravel().astype(np.float64) / 2147483648.0
    elif sample_width in _PCM_DTYPES:
        samples = np.frombuffer(raw, dtype=_PCM_DTYPES[sample_width]).astype(np.float64)
        if sample_width == 1:
            samples = (samples - 128.0) / 128.0
        else:
            samples /= float(2 ** (8 * sample_width - 1))
    else:
        raise AudioDecodeError(f"unsupported sample width {sample_width} in {path}")

    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    if samples.size == 0:
        raise AudioDecodeError(f"no audio frames in {path}")
    return samples, sample_rate
