"""Mono 16 kHz audio clips and 16-bit PCM WAV files.

The WAV surface is deliberately narrow: RIFF little-endian, PCM,
16-bit, mono, 16000 Hz, plain fmt/data chunks.  Anything else is
rejected with a format diagnostic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000


class WavFormatError(ValueError):
    """The file is not the supported RIFF/PCM-16/mono/16kHz flavour."""


@dataclass
class AudioClip:
    """Mono waveform, samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


def peak_normalize(x: np.ndarray, peak: float = 0.99) -> np.ndarray:
    """Scale so max |sample| == peak; silence passes through unchanged."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(np.abs(x)) if x.size else 0.0
    return x * (peak / m) if m > 0 else x.copy()


def wav_write(path, clip: AudioClip) -> None:
    """Write 16-bit PCM mono WAV (fmt + data chunks only)."""
    if clip.sample_rate != SAMPLE_RATE:
        raise WavFormatError(f"only {SAMPLE_RATE} Hz is supported, got {clip.sample_rate}")
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16,
        b"data", len(data),
    )
    with open(path, "wb") as f:
        f.write(hdr)
        f.write(data)


def wav_read(path) -> AudioClip:
    """Read a PCM-16 mono 16 kHz WAV; samples scaled by 1/32767 and clamped to [-1,1]."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"truncated {cid.decode('latin1').strip()!r} chunk")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise WavFormatError("missing fmt or data chunk")
    if len(fmt) < 16:
        raise WavFormatError("fmt chunk too short")

    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format != 1:
        raise WavFormatError(f"unsupported audio format {audio_format}, need PCM (1)")
    if bits != 16:
        raise WavFormatError(f"unsupported bit depth {bits}, need 16")
    if channels != 1:
        raise WavFormatError(f"unsupported channel count {channels}, need mono")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"unsupported sample rate {rate}, need {SAMPLE_RATE}")
    if len(data) % 2:
        raise WavFormatError("data chunk length is not a whole number of samples")

    pcm = np.frombuffer(data, dtype="<i2").astype(np.float64)
    return AudioClip(np.clip(pcm / 32767.0, -1.0, 1.0))
