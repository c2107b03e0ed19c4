"""Audio <-> Mel spectrogram codec and Griffin-Lim phase retrieval.

Analysis geometry (fixed): 16 kHz audio, 1024-sample Hann window (64 ms),
320-sample hop (20 ms), one-sided spectra with 513 bins at 15.625 Hz
spacing, centered by 512 zeros of padding each side.  The Mel filterbank
has 64 triangular filters on the HTK scale between 300 Hz and 8000 Hz.

Mel frames are normalized to [0,1]: dB relative to the clip maximum over
an 80 dB floor.  The reference is floored at 0 dB so digital silence
encodes to all zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, peak_normalize
from .rng import RngStream

N_FFT = 1024
HOP = 320
N_BINS = N_FFT // 2 + 1  # 513
N_MELS = 64
FMIN = 300.0
FMAX = 8000.0
HOP_S = HOP / 16000.0  # 20 ms
DB_RANGE = 80.0
POWER_FLOOR = 1e-10

# periodic Hann: constant-overlap-add friendly at any hop via the explicit
# squared-window divisor in istft()
_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(N_FFT) / N_FFT)

# LinearMagnitude: non-negative float array [frames, 513]
LinearMagnitude = np.ndarray


@dataclass
class MelSpectrogram:
    """Sequence of 64-dim Mel vectors in [0,1], one every 20 ms."""

    frames: np.ndarray  # [n_frames, 64] float32
    hop_s: float = HOP_S

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise ValueError(f"mel frames must be [n, {N_MELS}], got {self.frames.shape}")

    def __len__(self):
        return len(self.frames)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def num_frames(n_samples: int) -> int:
    return n_samples // HOP


def stft(clip: AudioClip) -> np.ndarray:
    """Complex one-sided spectrogram [frames, 513], frame i centered at i*20ms."""
    return stft_samples(clip.samples)


def stft_samples(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("cannot analyze empty audio")
    frames = num_frames(len(x))
    padded = np.pad(x, N_FFT // 2)
    starts = np.arange(frames) * HOP
    segs = padded[starts[:, None] + np.arange(N_FFT)] * _WINDOW
    return np.fft.rfft(segs, axis=1)


def istft(spec: np.ndarray) -> np.ndarray:
    """Overlap-add inverse with explicit squared-window normalization.

    This is the least-squares signal estimate from modified spectra, which
    is exactly what each Griffin-Lim iteration needs; it also makes
    istft(stft(x)) == x up to rounding wherever windows cover.
    """
    spec = np.asarray(spec)
    frames = spec.shape[0]
    n = frames * HOP
    segs = np.fft.irfft(spec, n=N_FFT, axis=1) * _WINDOW
    buf = np.zeros(n + N_FFT, dtype=np.float64)
    wsum = np.zeros(n + N_FFT, dtype=np.float64)
    w2 = _WINDOW * _WINDOW
    for i in range(frames):
        s = i * HOP
        buf[s:s + N_FFT] += segs[i]
        wsum[s:s + N_FFT] += w2
    out = buf[N_FFT // 2:N_FFT // 2 + n]
    norm = wsum[N_FFT // 2:N_FFT // 2 + n]
    return out / np.maximum(norm, 1e-12)


def mel_matrix() -> np.ndarray:
    """Triangular HTK-Mel filterbank [64, 513].

    66 edge points uniform in Mel between mel(300) and mel(8000) are
    rasterized to nearest FFT bins; each filter rises 0->1 to its center
    bin and falls back to 0, so neighbours overlap by one flank only.
    """
    edges_mel = np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2)
    edges_bin = np.round(mel_to_hz(edges_mel) / (16000.0 / N_FFT)).astype(int)
    mat = np.zeros((N_MELS, N_BINS), dtype=np.float64)
    for m in range(N_MELS):
        lo, c, hi = edges_bin[m], edges_bin[m + 1], edges_bin[m + 2]
        if not (lo < c < hi):
            raise AssertionError(f"degenerate filter {m}: bins {lo},{c},{hi}")
        k = np.arange(lo, c + 1)
        mat[m, k] = (k - lo) / (c - lo)
        k = np.arange(c, hi + 1)
        mat[m, k] = (hi - k) / (hi - c)
        mat[m, c] = 1.0
    return mat


_MEL = None


def _mel() -> np.ndarray:
    global _MEL
    if _MEL is None:
        _MEL = mel_matrix()
    return _MEL


def mel_encode(clip: AudioClip) -> MelSpectrogram:
    """Audio -> normalized 64-band Mel spectrogram at the 20 ms hop.

    The clip is peak-normalized to 0.99 first, so encoding is invariant
    to overall amplitude.
    """
    x = peak_normalize(clip.samples)
    if x.size == 0:
        raise ValueError("cannot encode empty audio")
    power = np.abs(stft_samples(x)) ** 2
    mel_power = power @ _mel().T
    db = 10.0 * np.log10(mel_power + POWER_FLOOR)
    # reference floored at 0 dB: silence lands at the bottom of the range
    ref = max(float(db.max()), 0.0)
    v = np.clip((db - ref + DB_RANGE) / DB_RANGE, 0.0, 1.0)
    return MelSpectrogram(v.astype(np.float32))


def mel_decode(mel: MelSpectrogram, gain_db: float = 0.0) -> LinearMagnitude:
    """Normalized Mel -> linear magnitude [frames, 513].

    gain_db plays the role of the clip-maximum reference lost in
    encoding.  Mel power is spread back over the linear bins with the
    filter transpose, weight-sum normalized per bin.
    """
    v = np.asarray(mel.frames, dtype=np.float64)
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise ValueError(f"mel values outside [0,1]: range [{v.min()}, {v.max()}]")
    db = v * DB_RANGE - DB_RANGE + gain_db
    mel_power = 10.0 ** (db / 10.0)
    w = _mel()
    colsum = w.sum(axis=0)
    spread = mel_power @ w
    power = np.divide(spread, colsum, out=np.zeros_like(spread), where=colsum > 0)
    return np.sqrt(np.maximum(power, 0.0))


def griffin_lim(mag: LinearMagnitude, iters: int = 60,
                rng: RngStream | None = None) -> AudioClip:
    """Recover a peak-normalized waveform from a magnitude spectrogram."""
    clip, _ = griffin_lim_trace(mag, iters, rng)
    return clip


def griffin_lim_trace(mag: LinearMagnitude, iters: int = 60,
                      rng: RngStream | None = None) -> tuple[AudioClip, np.ndarray]:
    """Griffin-Lim with the per-iteration spectral error sequence.

    Classic alternating projection: impose the target magnitude, estimate
    a signal by least-squares overlap-add, take its phase, repeat.
    errors[i] = || |stft(x_i)| - mag ||^2 is non-increasing.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != N_BINS:
        raise ValueError(f"magnitude must be [frames, {N_BINS}], got {mag.shape}")
    if mag.size and mag.min() < 0.0:
        raise ValueError("magnitudes must be non-negative")
    if rng is None:
        rng = RngStream(0, "gl-init")

    phase = rng.uniform(-np.pi, np.pi, mag.shape)
    spec = mag * np.exp(1j * phase)
    errors = np.empty(iters, dtype=np.float64)
    x = np.zeros(mag.shape[0] * HOP)
    for i in range(iters):
        x = istft(spec)
        est = stft_samples(x) if x.any() else np.zeros_like(spec)
        errors[i] = float(np.sum((np.abs(est) - mag) ** 2))
        # re-impose the target magnitude on the estimated phase
        absest = np.abs(est)
        unit = np.divide(est, absest, out=np.ones_like(est), where=absest > 0)
        spec = mag * unit
    x = istft(spec)
    return AudioClip(peak_normalize(x)), errors
