"""STFT analysis/synthesis and segment selection.

Default transform: 1024-sample Hann-windowed frames with hop 256 (75%
overlap), centered with reflect padding, so a 98,048-sample segment yields
a 513x384 complex spectrogram per channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import MultichannelAudio


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 1024
    hop: int = 256
    centered: bool = True

    def __post_init__(self):
        if self.fft_size < 2 or self.hop < 1:
            raise ValueError("invalid STFT parameters")
        if self.fft_size % self.hop != 0:
            raise ValueError("hop must divide fft_size for the COLA guarantee")

    @property
    def freq_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        # periodic Hann: satisfies constant overlap-add at hop = fft_size/4
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.fft_size)

    def num_frames(self, n_samples: int) -> int:
        if not self.centered:
            return max(0, (n_samples - self.fft_size) // self.hop + 1)
        return n_samples // self.hop + 1


# canonical segment length: centered STFT at the default params gives
# exactly 384 frames (513x384 spectrograms)
SEGMENT_SAMPLES = 98048

DEFAULT_SILENCE_FLOOR_DB = -60.0


def stft(audio: MultichannelAudio, params: StftParams = StftParams()) -> np.ndarray:
    """Per-channel STFT; returns complex array (channels, F, T)."""
    return stft_array(audio.data, params)


def stft_array(data: np.ndarray, params: StftParams = StftParams()) -> np.ndarray:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = data.shape[1]
    if n < 1:
        raise ValueError("empty input")

    win = params.window()
    half = params.fft_size // 2
    if params.centered:
        if n == 1:
            padded = np.pad(data, ((0, 0), (half, half)), mode="edge")
        else:
            padded = np.pad(data, ((0, 0), (half, half)), mode="reflect")
    else:
        padded = data

    t_frames = params.num_frames(n)
    if t_frames < 1:
        raise ValueError("input shorter than one frame in non-centered mode")

    starts = np.arange(t_frames) * params.hop
    idx = starts[:, None] + np.arange(params.fft_size)[None, :]
    frames = padded[:, idx] * win  # (C, T, fft)
    return np.fft.rfft(frames, axis=-1).transpose(0, 2, 1)


def istft(
    spec: np.ndarray,
    params: StftParams = StftParams(),
    length: int | None = None,
    sample_rate: int = 44100,
) -> MultichannelAudio:
    """Inverse STFT by weighted overlap-add; exact inverse of stft()."""
    spec = np.asarray(spec)
    if spec.ndim == 2:
        spec = spec[np.newaxis]
    channels, f, t_frames = spec.shape
    if f != params.freq_bins:
        raise ValueError(f"expected {params.freq_bins} frequency bins, got {f}")

    win = params.window()
    frames = np.fft.irfft(spec.transpose(0, 2, 1), n=params.fft_size, axis=-1)
    frames *= win  # synthesis window for weighted OLA

    total = (t_frames - 1) * params.hop + params.fft_size
    out = np.zeros((channels, total))
    wsum = np.zeros(total)
    for t in range(t_frames):
        s = t * params.hop
        out[:, s : s + params.fft_size] += frames[:, t]
        wsum[s : s + params.fft_size] += win**2

    half = params.fft_size // 2 if params.centered else 0
    if length is None:
        length = (t_frames - 1) * params.hop if params.centered else total
    nz = wsum > 1e-12
    out[:, nz] /= wsum[nz]
    out = out[:, half : half + length]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return MultichannelAudio(out, sample_rate)


def split_mag_phase(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude/phase split; zero bins get phase 0 by convention."""
    mag = np.abs(spec)
    phase = np.where(mag > 0, np.angle(spec), 0.0)
    return mag, phase


def combine_mag_phase(mag: np.ndarray, phase: np.ndarray) -> np.ndarray:
    return mag * np.exp(1j * phase)


def rms_dbfs(x: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(np.square(x))))
    if rms <= 0.0:
        return -np.inf
    return 20.0 * np.log10(rms)


def extract_segments(
    audio: MultichannelAudio,
    seg_samples: int,
    stems: list[MultichannelAudio],
    silence_floor_db: float = DEFAULT_SILENCE_FLOOR_DB,
) -> list[tuple[int, int]]:
    """Consecutive non-overlapping windows where at least one stem is audible.

    Returns (start, stop) sample ranges. A window counts if any stem's RMS
    over it exceeds silence_floor_db (dBFS).
    """
    n = audio.samples_per_channel
    for stem in stems:
        if stem.samples_per_channel != n or stem.sample_rate != audio.sample_rate:
            raise ValueError("stems must share length and sample rate with the mix")

    ranges = []
    for start in range(0, n - seg_samples + 1, seg_samples):
        stop = start + seg_samples
        if any(rms_dbfs(s.data[:, start:stop]) > silence_floor_db for s in stems):
            ranges.append((start, stop))
    return ranges
