"""Test-time upmixing: style transfer, blind generation, and the baseline.

All model-based modes work segment by segment: the stereo input is cut into
non-overlapping segments matching the model's training shape, each segment
is decoded under a single job-wide latent code, the stereo phases are
applied to the generated magnitudes, and the inverse transform results are
concatenated back to the input length.
"""

from __future__ import annotations

import numpy as np
import torch

from .audio_io import MultichannelAudio
from .dataset import CANONICAL_RATE, CorpusProfile
from .dsp import combine_mag_phase, istft, split_mag_phase, stft
from .model import SpatialVAE
from .vbap import downmix

BASELINE_GAIN = 1.0 / np.sqrt(2.0)  # power-preserving front/rear split


def baseline_upmix(stereo: MultichannelAudio) -> MultichannelAudio:
    """"All channel stereo": L feeds FL and RL, R feeds FR and RR, C silent.

    The 1/sqrt(2) gain keeps total power equal to the input's, and
    downmix(baseline_upmix(x)) = sqrt(2) * x exactly.
    """
    if stereo.channels != 2:
        raise ValueError(f"expected 2 channels, got {stereo.channels}")
    left, right = stereo.data
    out = np.stack([
        BASELINE_GAIN * left,
        BASELINE_GAIN * left,
        np.zeros_like(left),
        BASELINE_GAIN * right,
        BASELINE_GAIN * right,
    ])
    return MultichannelAudio(out, stereo.sample_rate)


def reconstruct_phase(stereo_complex: np.ndarray) -> np.ndarray:
    """5-channel phase from a stereo complex spectrogram (2, F, T).

    Left phase drives FL and RL, right phase drives FR and RR, and the
    center takes the angle of the complex sum (circular mean); zero bins
    get phase 0.
    """
    if stereo_complex.shape[0] != 2:
        raise ValueError("expected a 2-channel complex spectrogram")
    left, right = stereo_complex
    _, left_phase = split_mag_phase(left)
    _, right_phase = split_mag_phase(right)
    _, center_phase = split_mag_phase(left + right)
    return np.stack([left_phase, left_phase, center_phase, right_phase, right_phase])


def assemble_output(
    magnitudes: list,
    phases: list,
    profile: CorpusProfile,
    sample_rate: int = CANONICAL_RATE,
) -> MultichannelAudio:
    """Per-segment (mag, phase) -> iSTFT -> concatenation, no overlap."""
    if len(magnitudes) != len(phases):
        raise ValueError("segment counts differ")
    pieces = []
    for mag, phase in zip(magnitudes, phases):
        if mag.shape != phase.shape:
            raise ValueError("magnitude/phase shape mismatch")
        spec = combine_mag_phase(mag, phase)
        pieces.append(
            istft(spec, profile.stft, length=profile.seg_samples,
                  sample_rate=sample_rate).data
        )
    return MultichannelAudio(np.concatenate(pieces, axis=1), sample_rate)


def _segment_starts(n_samples: int, seg: int, pad_tail: bool):
    full = n_samples // seg
    starts = [i * seg for i in range(full)]
    if pad_tail and n_samples % seg:
        starts.append(full * seg)
    return starts


def _stereo_segments(stereo: MultichannelAudio, profile: CorpusProfile):
    """Cut stereo into full segments, zero-padding the trailing partial one."""
    seg = profile.seg_samples
    for start in _segment_starts(stereo.samples_per_channel, seg, pad_tail=True):
        chunk = stereo.data[:, start : start + seg]
        if chunk.shape[1] < seg:
            chunk = np.pad(chunk, ((0, 0), (0, seg - chunk.shape[1])))
        yield chunk


def extract_style_code(
    model: SpatialVAE, style_ref: MultichannelAudio, profile: CorpusProfile
) -> np.ndarray:
    """Average encoder mean over all full segments of a 5-channel reference."""
    if style_ref.channels != 5:
        raise ValueError("style reference must be 5-channel")
    seg = profile.seg_samples
    starts = _segment_starts(style_ref.samples_per_channel, seg, pad_tail=False)
    if not starts:
        raise ValueError("style reference shorter than one segment")
    mus = []
    with torch.no_grad():
        for start in starts:
            mag = np.abs(
                stft(
                    MultichannelAudio(
                        style_ref.data[:, start : start + seg], style_ref.sample_rate
                    ),
                    profile.stft,
                )
            )
            mu, _ = model.encode(torch.from_numpy(mag).float()[None])
            mus.append(mu[0].numpy())
    return np.mean(mus, axis=0)


def rescale_to_downmix(mag5: np.ndarray, mag2: np.ndarray) -> np.ndarray:
    """Scale each time-frequency bin of a generated 5-channel magnitude so the
    left group (FL + RL + C/2) matches the input's left magnitude and the
    right group (FR + RR + C/2) matches the right one.

    For amplitude-panned material the downmix relation holds per side exactly,
    so this pins the output's lateral balance to the stereo input — which the
    input determines completely — and leaves only the front/rear split to the
    decoder. The decoder is far more reliable about that relative split than
    about absolute levels. The center channel feeds both sides, so it is
    scaled by the mean of the two side factors: the match is exact wherever
    the center is silent and approximate otherwise. Bins where a group is
    (near) silent are left untouched rather than blown up.
    """
    front_left, rear_left, center, front_right, rear_right = mag5
    left, right = mag2
    left_total = front_left + rear_left + 0.5 * center
    right_total = front_right + rear_right + 0.5 * center
    s_left = np.where(left_total > 1e-12,
                      left / np.maximum(left_total, 1e-12), 1.0)
    s_right = np.where(right_total > 1e-12,
                       right / np.maximum(right_total, 1e-12), 1.0)
    return np.stack([
        front_left * s_left,
        rear_left * s_left,
        center * 0.5 * (s_left + s_right),
        front_right * s_right,
        rear_right * s_right,
    ])


def _decode_stereo(
    model: SpatialVAE, stereo: MultichannelAudio, h: np.ndarray,
    profile: CorpusProfile,
) -> MultichannelAudio:
    if stereo.channels != 2:
        raise ValueError("upmix input must be stereo")
    if stereo.sample_rate != CANONICAL_RATE:
        raise ValueError(f"pipeline requires {CANONICAL_RATE} Hz input")
    h_t = torch.from_numpy(np.asarray(h, dtype=np.float32))[None]
    mags, phases = [], []
    with torch.no_grad():
        for chunk in _stereo_segments(stereo, profile):
            spec2 = stft(
                MultichannelAudio(chunk, stereo.sample_rate), profile.stft
            )
            mag2, _ = split_mag_phase(spec2)
            pred = model.decode(torch.from_numpy(mag2).float()[None], h_t)
            mag5 = rescale_to_downmix(pred[0].numpy().astype(np.float64), mag2)
            mags.append(mag5)
            phases.append(reconstruct_phase(spec2))
    out = assemble_output(mags, phases, profile, stereo.sample_rate)
    return MultichannelAudio(
        out.data[:, : stereo.samples_per_channel], stereo.sample_rate
    )


def style_transfer(
    model: SpatialVAE,
    style_ref: MultichannelAudio,
    stereo: MultichannelAudio,
    profile: CorpusProfile,
) -> MultichannelAudio:
    """Upmix stereo under the spatial code extracted from a 5-channel example.

    Deterministic: the encoder mean is used directly, no sampling.
    """
    h = extract_style_code(model, style_ref, profile)
    return _decode_stereo(model, stereo, h, profile)


def blind_upmix(
    model: SpatialVAE,
    stereo: MultichannelAudio,
    profile: CorpusProfile,
    seed: int = 0,
) -> MultichannelAudio:
    """Upmix stereo under a latent drawn once from the standard-normal prior."""
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(model.cfg.latent_dim)
    return _decode_stereo(model, stereo, h, profile)
