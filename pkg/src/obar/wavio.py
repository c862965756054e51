"""Float WAV reading and writing.

Stems are mono RIFF/WAVE IEEE float32; rendered output is one float32 channel
per loudspeaker. scipy handles the container since the stdlib wave module has
no float support.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.io import wavfile

from .errors import MissingStem, SchemaError


def read_stem(path: str) -> tuple[int, np.ndarray]:
    """Read a mono float32 stem; returns (sample_rate, float64 samples)."""
    if not os.path.isfile(path):
        raise MissingStem(f"stem file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise SchemaError(f"unreadable stem {path}: {exc}") from exc
    if data.dtype != np.float32:
        raise SchemaError(f"stem {path} must be IEEE float32, got {data.dtype}")
    if data.ndim != 1:
        raise SchemaError(f"stem {path} must be mono, got {data.ndim} channels")
    return int(rate), data.astype(np.float64)


def write_wav(path: str, sample_rate: int, channels: np.ndarray) -> None:
    """Write a (samples, channels) float array as a float32 multichannel WAV."""
    data = np.asarray(channels, dtype=np.float32)
    if data.ndim == 1:
        data = data[:, None]
    wavfile.write(path, int(sample_rate), data)
