"""2-D vector-based amplitude panning over a 5-speaker ring.

Angle convention: degrees counterclockwise, 0 deg at front center, so the
left hemisphere is positive. Channel order everywhere is [FL, RL, C, FR, RR]
with default azimuths [+30, +110, 0, -30, -110].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .audio_io import MultichannelAudio

CHANNEL_NAMES = ("FL", "RL", "C", "FR", "RR")
DEFAULT_AZIMUTHS = (30.0, 110.0, 0.0, -30.0, -110.0)

STEM_NAMES = ("vocals", "drums", "bass", "other")


def wrap_degrees(theta: float) -> float:
    return float(theta) % 360.0


def circular_distance_deg(a: float, b: float) -> float:
    """Shortest angular distance, in [0, 180]."""
    return abs((a - b + 180.0) % 360.0 - 180.0)


def _unit_vector(theta_deg: float) -> np.ndarray:
    rad = math.radians(theta_deg)
    return np.array([math.cos(rad), math.sin(rad)])


@dataclass(frozen=True)
class SpeakerLayout:
    azimuths_deg: tuple = DEFAULT_AZIMUTHS  # in channel order [FL, RL, C, FR, RR]

    def __post_init__(self):
        az = tuple(wrap_degrees(a) for a in self.azimuths_deg)
        if len(az) != 5 or len(set(az)) != 5:
            raise ValueError("layout needs 5 distinct azimuths")
        object.__setattr__(self, "azimuths_deg", az)

    def ring(self) -> list:
        """(azimuth, channel index) sorted counterclockwise."""
        return sorted((a, c) for c, a in enumerate(self.azimuths_deg))

    def speaker_vectors(self) -> np.ndarray:
        """Unit direction vectors, shape (5, 2), channel order."""
        return np.stack([_unit_vector(a) for a in self.azimuths_deg])

    @classmethod
    def from_json(cls, path) -> "SpeakerLayout":
        with open(path) as f:
            mapping = json.load(f)
        missing = [n for n in CHANNEL_NAMES if n not in mapping]
        if missing:
            raise ValueError(f"layout file missing channels: {missing}")
        return cls(tuple(float(mapping[n]) for n in CHANNEL_NAMES))


DEFAULT_LAYOUT = SpeakerLayout()


@dataclass(frozen=True)
class PanningConfig:
    """Azimuth per stem, normalized to [0, 360)."""

    stem_directions: dict

    def __post_init__(self):
        norm = {k: wrap_degrees(v) for k, v in self.stem_directions.items()}
        object.__setattr__(self, "stem_directions", norm)

    def __getitem__(self, stem: str) -> float:
        return self.stem_directions[stem]

    def to_dict(self) -> dict:
        return dict(self.stem_directions)


def pan_gains(theta: float, layout: SpeakerLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """VBAP gains for a source at azimuth theta.

    Solves the 2x2 system on the adjacent speaker pair bracketing theta and
    L2-normalizes, so at most two gains are nonzero and ||g|| = 1. A source
    exactly at a speaker gets a one-hot gain vector.
    """
    theta = wrap_degrees(theta)
    ring = layout.ring()

    for az, ch in ring:
        if circular_distance_deg(theta, az) < 1e-9:
            g = np.zeros(5)
            g[ch] = 1.0
            return g

    # find the bracketing pair on the ring (wraps across 360)
    pair = None
    for i in range(len(ring)):
        a1, c1 = ring[i]
        a2, c2 = ring[(i + 1) % len(ring)]
        span = (a2 - a1) % 360.0
        if (theta - a1) % 360.0 < span:
            pair = (a1, c1, a2, c2)
            break
    a1, c1, a2, c2 = pair

    basis = np.column_stack([_unit_vector(a1), _unit_vector(a2)])
    g12 = np.linalg.solve(basis, _unit_vector(theta))
    g12 = np.maximum(g12, 0.0)  # negatives only at numerical boundaries
    g12 /= np.linalg.norm(g12)

    gains = np.zeros(5)
    gains[c1], gains[c2] = g12
    return gains


def render_stems(
    stems: list,
    config: PanningConfig,
    layout: SpeakerLayout = DEFAULT_LAYOUT,
    stem_names: tuple = STEM_NAMES,
) -> MultichannelAudio:
    """Pan each mono stem to its configured direction; returns 5-channel audio.

    Stereo stems are collapsed to mono (mean of L and R) before panning.
    """
    if len(stems) != len(stem_names):
        raise ValueError("one stem per name required")
    lengths = {s.samples_per_channel for s in stems}
    rates = {s.sample_rate for s in stems}
    if len(lengths) != 1 or len(rates) != 1:
        raise ValueError("stems must share length and sample rate")

    n = lengths.pop()
    out = np.zeros((5, n))
    for stem, name in zip(stems, stem_names):
        mono = stem.data.mean(axis=0)
        out += np.outer(pan_gains(config[name], layout), mono)
    return MultichannelAudio(out, rates.pop())


def downmix(five: np.ndarray) -> np.ndarray:
    """Passive 5-to-2 downmix: L = FL + RL + C/2, R = FR + RR + C/2.

    Works on any array whose leading axis is the 5 channels (waveforms or
    spectrogram tensors; on magnitudes the result is only a diagnostic
    approximation since magnitudes do not add linearly).
    """
    five = np.asarray(five)
    if five.shape[0] != 5:
        raise ValueError(f"expected 5 channels, got {five.shape[0]}")
    left = five[0] + five[1] + five[2] / 2.0
    right = five[3] + five[4] + five[2] / 2.0
    return np.stack([left, right])


def downmix_audio(five: MultichannelAudio) -> MultichannelAudio:
    return MultichannelAudio(downmix(five.data), five.sample_rate)


def estimate_direction_from_gains(
    gains: np.ndarray, layout: SpeakerLayout = DEFAULT_LAYOUT
) -> float:
    """Azimuth of the gain-weighted speaker vector sum; inverts pan_gains."""
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (5,) or np.any(gains < 0):
        raise ValueError("need 5 nonnegative gains")
    v = gains @ layout.speaker_vectors()
    if np.hypot(v[0], v[1]) < 1e-30:
        raise ValueError("gain vector has no net direction")
    return wrap_degrees(math.degrees(math.atan2(v[1], v[0])))
