"""Waveform <-> mel-spectrogram conversion and Griffin-Lim inversion.

Analysis: Hann-windowed STFT (50 ms frames, 12.5 ms hop by default),
triangular mel filterbank on the magnitudes, log compression with a
fixed floor.  Synthesis: pseudo-inverse mel inversion (clipped at 0)
followed by Griffin-Lim phase projection.  The ISTFT is the
least-squares overlap-add inverse, which is what makes the Griffin-Lim
consistency error non-increasing.
"""

from __future__ import annotations

import wave as wave_module
from dataclasses import dataclass

import numpy as np


class DspError(ValueError):
    pass


@dataclass
class StftConfig:
    sample_rate: int = 16000
    frame_ms: float = 50.0
    hop_ms: float = 12.5
    fft_size: int = 1024

    def __post_init__(self):
        if self.hop_length > self.frame_length:
            raise DspError("hop must not exceed frame length")
        if self.fft_size < self.frame_length:
            raise DspError("fft_size must cover the frame")

    @property
    def frame_length(self):
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop_length(self):
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1


@dataclass
class MelFilterbank:
    weights: np.ndarray  # [n_mels, n_bins]
    fmin: float
    fmax: float


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [n_frames, n_mels], log-compressed
    config: StftConfig


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int


LOG_FLOOR = 1e-5


def hann_window(n):
    """Periodic Hann (sums to a constant under hop = n/4 overlap-add)."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def frame_count(n_samples, cfg):
    if n_samples < cfg.frame_length:
        raise DspError(
            f"waveform of {n_samples} samples is shorter than one "
            f"{cfg.frame_length}-sample frame")
    return 1 + (n_samples - cfg.frame_length) // cfg.hop_length


def stft(wave, cfg):
    """Complex spectrogram [n_frames, fft_size//2+1]; no padding."""
    samples = np.asarray(wave.samples if isinstance(wave, Waveform) else wave,
                         dtype=np.float64)
    n = frame_count(len(samples), cfg)
    frame, hop = cfg.frame_length, cfg.hop_length
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    frames = samples[idx] * hann_window(frame)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def istft(spec, cfg):
    """Least-squares overlap-add inverse of ``stft``.

    Each frame is inverse-transformed, truncated to the frame length,
    weighted by the window, and the overlap sum is normalized by the
    summed squared window per sample.
    """
    frame, hop = cfg.frame_length, cfg.hop_length
    n_frames = spec.shape[0]
    length = frame + hop * (n_frames - 1)
    win = hann_window(frame)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, :frame]
    num = np.zeros(length)
    den = np.zeros(length)
    for t in range(n_frames):
        s = t * hop
        num[s:s + frame] += win * frames[t]
        den[s:s + frame] += win * win
    # Clamping the normalizer only affects the outermost window tails
    # (interior samples sit at sum(w^2) = 1.5); without it, inconsistent
    # spectra blow up by 1/w^2 at the signal edges.
    return num / np.maximum(den, 1e-2)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg, n_mels=80, fmin=0.0, fmax=8000.0):
    """Triangular filters with mel-uniform peak spacing."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size
    weights = np.zeros((n_mels, cfg.n_bins))
    for m in range(n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / (center - lo)
        down = (hi - bin_hz) / (hi - center)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
        if not weights[m].any():
            raise DspError(
                f"mel filter {m} has no support; fft_size too small")
    return MelFilterbank(weights=weights, fmin=fmin, fmax=fmax)


def mel_spectrogram(wave, cfg, fb):
    """Log mel energies: log(max(fb @ |STFT|, floor))."""
    mag = np.abs(stft(wave, cfg))
    mel = mag @ fb.weights.T
    return MelSpectrogram(frames=np.log(np.maximum(mel, LOG_FLOOR)), config=cfg)


def mel_to_linear(mel, fb):
    """Magnitude estimate via the filterbank pseudo-inverse, clipped at 0."""
    energies = np.exp(mel.frames)
    linear = energies @ np.linalg.pinv(fb.weights).T
    return np.maximum(linear, 0.0)


def phase_reconstruct(target_mag, cfg, iterations):
    """Alternating-projection phase retrieval from a magnitude spectrogram.

    Starts from zero phase and alternates the least-squares ISTFT with
    magnitude replacement.  Returns (samples, errors) with the
    per-iteration consistency error ||(|STFT(x_k)| - target)|| / ||target||,
    which is non-increasing because both steps are projections.
    """
    if iterations < 1:
        raise DspError("iterations must be >= 1")
    norm = max(np.linalg.norm(target_mag), 1e-300)
    errors = np.empty(iterations)
    x = istft(target_mag.astype(np.complex128), cfg)
    for k in range(iterations):
        analyzed = stft(x, cfg)
        mag = np.abs(analyzed)
        errors[k] = np.linalg.norm(mag - target_mag) / norm
        phase = np.where(mag > 0, analyzed / np.maximum(mag, 1e-300), 1.0)
        x = istft(target_mag * phase, cfg)
    return x, errors


def griffin_lim(mel, cfg, fb, iterations=60, return_errors=False):
    """Waveform from a log-mel spectrogram: mel inversion + phase retrieval.

    Output is peak-normalized to at most 1 (never amplified).
    """
    target = mel_to_linear(mel, fb)
    x, errors = phase_reconstruct(target, cfg, iterations)
    peak = np.abs(x).max() if len(x) else 0.0
    out = Waveform(samples=x / max(peak, 1.0), sample_rate=cfg.sample_rate)
    if return_errors:
        return out, errors
    return out


def read_wav(path):
    """Load 16-bit signed little-endian mono PCM; anything else is rejected."""
    with wave_module.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise DspError(f"{path}: expected mono audio, got "
                           f"{f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise DspError(f"{path}: expected 16-bit PCM, got "
                           f"{8 * f.getsampwidth()}-bit")
        if f.getcomptype() != "NONE":
            raise DspError(f"{path}: compressed WAV not supported")
        raw = f.readframes(f.getnframes())
        rate = f.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, wave):
    samples = np.clip(wave.samples, -1.0, 1.0)
    pcm = (samples * 32767.0).round().astype("<i2")
    with wave_module.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wave.sample_rate)
        f.writeframes(pcm.tobytes())


def resample(wave, target_rate):
    """Linear-interpolation resampling (ingestion convenience)."""
    if wave.sample_rate == target_rate:
        return wave
    n_out = int(round(len(wave.samples) * target_rate / wave.sample_rate))
    t_in = np.arange(len(wave.samples)) / wave.sample_rate
    t_out = np.arange(n_out) / target_rate
    return Waveform(samples=np.interp(t_out, t_in, wave.samples),
                    sample_rate=target_rate)
