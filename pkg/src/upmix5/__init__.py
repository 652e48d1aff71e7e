"""Stereo-to-5-channel music upmixing workbench.

Pipeline: VBAP-render stems into ground-truth 5-channel mixes, train a
stereo-conditioned VAE whose latent captures the spatial image, then upmix
new stereo by style transfer or blind sampling, with objective spatial
metrics (SD-SDR, WILD, angle error) for evaluation.
"""

from .audio_io import MultichannelAudio, read_wav, write_wav
from .dsp import StftParams, stft, istft, split_mag_phase, extract_segments
from .vbap import (
    SpeakerLayout,
    PanningConfig,
    pan_gains,
    render_stems,
    downmix,
    estimate_direction_from_gains,
)
from .dataset import (
    CorpusProfile,
    FULL_PROFILE,
    TOY_PROFILE,
    StemSong,
    TrainingExample,
    make_tiny_corpus,
    build_corpus,
)
from .model import ArchConfig, SpatialVAE, init_params, elbo_loss, train
from .generate import style_transfer, blind_upmix, baseline_upmix
from .metrics import sd_sdr, wild, angle_difference_report

__all__ = [name for name in dir() if not name.startswith("_")]
