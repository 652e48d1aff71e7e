"""Multichannel WAV reading and writing.

Supports RIFF/WAVE containers with 16-bit int, 24-bit int, and 32-bit float
PCM. Integer samples are normalized to [-1, 1] by the type's max magnitude.

Channel order for 5-channel files is [FL, RL, C, FR, RR] throughout this
package. This differs from the usual WAV convention (FL, FR, C, ...), so
files written here should only be read back with this package or with the
order in mind.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class WavError(Exception):
    """Base class for WAV I/O failures."""


class MalformedWavError(WavError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedEncodingError(WavError):
    """The container is valid but uses an encoding we do not handle."""


@dataclass(frozen=True)
class MultichannelAudio:
    """Immutable time-domain buffer, shape (channels, samples)."""

    data: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise ValueError("audio data must be 1-D or 2-D (channels, samples)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(arr)):
            raise ValueError("audio contains non-finite samples")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples_per_channel(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.samples_per_channel / self.sample_rate


_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def read_wav(path) -> MultichannelAudio:
    """Read a WAV file into a normalized float buffer.

    Raises FileNotFoundError, MalformedWavError, or UnsupportedEncodingError
    depending on what went wrong.
    """
    with open(path, "rb") as f:
        raw = f.read()

    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data_bytes = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise MalformedWavError(f"{path}: data chunk shorter than declared")
            data_bytes = body
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None or data_bytes is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _, block_align, bits = fmt
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        raise UnsupportedEncodingError(f"{path}: WAVE_FORMAT_EXTENSIBLE not supported")
    if channels < 1:
        raise MalformedWavError(f"{path}: channel count {channels}")

    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        flat = np.frombuffer(data_bytes, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_PCM and bits == 24:
        b = np.frombuffer(data_bytes, dtype=np.uint8)
        b = b[: (len(b) // 3) * 3].reshape(-1, 3)
        vals = (
            b[:, 0].astype(np.int32)
            | (b[:, 1].astype(np.int32) << 8)
            | (b[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        flat = vals.astype(np.float64) / float(1 << 23)
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        flat = np.frombuffer(data_bytes, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncodingError(
            f"{path}: format tag {audio_format} with {bits} bits not supported"
        )

    n = (len(flat) // channels) * channels
    frames = flat[:n].reshape(-1, channels)
    return MultichannelAudio(frames.T.copy(), sample_rate)


def write_wav(path, audio: MultichannelAudio, bit_depth: str = "32f") -> None:
    """Write audio as 16i, 24i, or 32f PCM. 32f round-trips bit-exactly."""
    if bit_depth not in ("16i", "24i", "32f"):
        raise ValueError(f"bit_depth must be 16i, 24i, or 32f, got {bit_depth!r}")
    if not np.all(np.isfinite(audio.data)):
        raise ValueError("refusing to write non-finite samples")

    frames = np.ascontiguousarray(audio.data.T)  # (samples, channels)
    channels = audio.channels

    if bit_depth == "16i":
        scaled = np.clip(np.round(frames * 32768.0), -32768, 32767).astype("<i2")
        payload = scaled.tobytes()
        bits, fmt_tag = 16, _WAVE_FORMAT_PCM
    elif bit_depth == "24i":
        full = 1 << 23
        vals = np.clip(np.round(frames * full), -full, full - 1).astype(np.int32)
        flat = vals.reshape(-1)
        out = np.empty((flat.size, 3), dtype=np.uint8)
        out[:, 0] = flat & 0xFF
        out[:, 1] = (flat >> 8) & 0xFF
        out[:, 2] = (flat >> 16) & 0xFF
        payload = out.tobytes()
        bits, fmt_tag = 24, _WAVE_FORMAT_PCM
    else:
        payload = frames.astype("<f4").tobytes()
        bits, fmt_tag = 32, _WAVE_FORMAT_IEEE_FLOAT

    block_align = channels * bits // 8
    byte_rate = audio.sample_rate * block_align
    fmt_chunk = struct.pack(
        "<HHIIHH", fmt_tag, channels, audio.sample_rate, byte_rate, block_align, bits
    )
    body = (
        b"WAVE"
        + b"fmt "
        + struct.pack("<I", len(fmt_chunk))
        + fmt_chunk
        + b"data"
        + struct.pack("<I", len(payload))
        + payload
    )
    if len(payload) & 1:
        body += b"\x00"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", len(body)) + body)
