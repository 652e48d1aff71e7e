"""Training-corpus synthesis from stem recordings.

Each example is a triple built from one song segment: the encoder sees the
magnitude spectrogram of a 5-channel VBAP rendering under panning config r,
the decoder sees the stereo downmix of an *independent* rendering under
config a, and the target equals the encoder input. Keeping a != r makes the
stereo panning uninformative about the 5-channel panning.

On-disk layout: one example per .u5x file (JSON preamble + little-endian
float32 tensors) plus a JSON manifest recording every (song, segment, r, a).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import MultichannelAudio, read_wav
from .dsp import SEGMENT_SAMPLES, StftParams, extract_segments, stft
from .vbap import STEM_NAMES, DEFAULT_LAYOUT, PanningConfig, downmix, render_stems

CANONICAL_RATE = 44100

_MAGIC = b"U5EX"


@dataclass(frozen=True)
class CorpusProfile:
    """STFT parameters plus the segment length they pair with."""

    stft: StftParams
    seg_samples: int

    @property
    def freq_bins(self) -> int:
        return self.stft.freq_bins

    @property
    def frames(self) -> int:
        return self.stft.num_frames(self.seg_samples)

    def to_dict(self) -> dict:
        return {
            "fft_size": self.stft.fft_size,
            "hop": self.stft.hop,
            "seg_samples": self.seg_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusProfile":
        return cls(StftParams(d["fft_size"], d["hop"]), d["seg_samples"])


# full scale: 513x384 spectrograms from ~2.22 s segments
FULL_PROFILE = CorpusProfile(StftParams(1024, 256), SEGMENT_SAMPLES)
# desk scale for fast training/tests: 129x96 spectrograms from ~0.14 s segments
TOY_PROFILE = CorpusProfile(StftParams(256, 64), 6080)


@dataclass(frozen=True)
class StemSong:
    id: str
    stems: dict  # name -> MultichannelAudio, mono
    sample_rate: int

    def __post_init__(self):
        if set(self.stems) != set(STEM_NAMES):
            raise ValueError(f"song needs exactly the stems {STEM_NAMES}")
        lengths = {s.samples_per_channel for s in self.stems.values()}
        if len(lengths) != 1:
            raise ValueError("all stems must have the same length")
        if self.sample_rate != CANONICAL_RATE:
            raise ValueError(f"pipeline requires {CANONICAL_RATE} Hz input")

    @property
    def n_samples(self) -> int:
        return next(iter(self.stems.values())).samples_per_channel

    def stem_list(self) -> list:
        return [self.stems[n] for n in STEM_NAMES]


@dataclass(frozen=True)
class TrainingExample:
    enc_input: np.ndarray  # (5, F, T) magnitudes
    dec_stereo: np.ndarray  # (2, F, T) magnitudes
    meta: dict

    @property
    def target(self) -> np.ndarray:
        # the reconstruction target is the encoder's own input
        return self.enc_input


def sample_panning_config(rng: np.random.Generator) -> PanningConfig:
    """Four i.i.d. directions, uniform over the full circle."""
    angles = rng.uniform(0.0, 360.0, size=len(STEM_NAMES))
    return PanningConfig(dict(zip(STEM_NAMES, angles)))


def synthesize_example(
    song: StemSong,
    segment: tuple,
    r: PanningConfig,
    a: PanningConfig,
    profile: CorpusProfile = FULL_PROFILE,
) -> TrainingExample:
    start, stop = segment
    if stop - start != profile.seg_samples:
        raise ValueError("segment length does not match the profile")

    seg_stems = [
        MultichannelAudio(song.stems[n].data[:, start:stop], song.sample_rate)
        for n in STEM_NAMES
    ]
    five_r = render_stems(seg_stems, r)
    five_a = render_stems(seg_stems, a)
    stereo_a = downmix(five_a.data)

    enc = np.abs(stft(five_r, profile.stft))
    dec = np.abs(
        stft(MultichannelAudio(stereo_a, song.sample_rate), profile.stft)
    )
    meta = {
        "song_id": song.id,
        "segment_index": start // profile.seg_samples,
        "start": start,
        "stop": stop,
        "r": r.to_dict(),
        "a": a.to_dict(),
    }
    return TrainingExample(enc.astype(np.float32), dec.astype(np.float32), meta)


def save_example(path, ex: TrainingExample) -> None:
    header = dict(ex.meta)
    header["shapes"] = {
        "enc_input": list(ex.enc_input.shape),
        "dec_stereo": list(ex.dec_stereo.shape),
    }
    header["dtype"] = "<f4"
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(ex.enc_input, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(ex.dec_stereo, dtype="<f4").tobytes())


def load_example(path) -> TrainingExample:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an example file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        shapes = header.pop("shapes")
        header.pop("dtype")
        enc_shape = tuple(shapes["enc_input"])
        dec_shape = tuple(shapes["dec_stereo"])
        enc = np.frombuffer(f.read(4 * int(np.prod(enc_shape))), dtype="<f4").copy()
        dec = np.frombuffer(f.read(4 * int(np.prod(dec_shape))), dtype="<f4").copy()
    return TrainingExample(enc.reshape(enc_shape), dec.reshape(dec_shape), header)


def split_songs(
    song_ids: list, fractions: tuple, rng: np.random.Generator
) -> dict:
    """Disjoint song-level split by largest remainder; deterministic under rng."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = len(song_ids)
    names = ("train", "val", "test")
    quotas = [f * n for f in fractions]
    counts = [int(q) for q in quotas]
    remainders = sorted(
        range(3), key=lambda i: (quotas[i] - counts[i], -i), reverse=True
    )
    for i in remainders:
        if sum(counts) == n:
            break
        counts[i] += 1
    if min(counts) < 1:
        raise ValueError("not enough songs to populate every subset")

    order = list(song_ids)
    rng.shuffle(order)
    split, pos = {}, 0
    for name, c in zip(names, counts):
        split[name] = sorted(order[pos : pos + c])
        pos += c
    return split


def build_corpus(
    songs: list,
    out_dir,
    split: tuple = (0.7, 0.1, 0.2),
    segments_per_song: int = 8,
    seed: int = 0,
    profile: CorpusProfile = FULL_PROFILE,
    silence_floor_db: float = -60.0,
) -> dict:
    """Synthesize a corpus on disk and return its manifest."""
    if not songs:
        raise ValueError("empty song list")
    out_dir = Path(out_dir)
    (out_dir / "examples").mkdir(parents=True, exist_ok=True)

    subsets = split_songs(
        [s.id for s in songs], split, np.random.default_rng([seed, 0xC0])
    )
    subset_of = {sid: name for name, ids in subsets.items() for sid in ids}

    entries = []
    for song_idx, song in enumerate(sorted(songs, key=lambda s: s.id)):
        mix = MultichannelAudio(
            sum(st.data for st in song.stem_list()), song.sample_rate
        )
        candidates = extract_segments(
            mix, profile.seg_samples, song.stem_list(), silence_floor_db
        )
        song_rng = np.random.default_rng([seed, 1, song_idx])
        if len(candidates) > segments_per_song:
            keep = sorted(
                song_rng.choice(len(candidates), segments_per_song, replace=False)
            )
            candidates = [candidates[i] for i in keep]
        for seg in candidates:
            seg_idx = seg[0] // profile.seg_samples
            seg_rng = np.random.default_rng([seed, 2, song_idx, seg_idx])
            r = sample_panning_config(seg_rng)
            a = sample_panning_config(seg_rng)
            ex = synthesize_example(song, seg, r, a, profile)
            fname = f"{song.id}_{seg_idx:05d}.u5x"
            save_example(out_dir / "examples" / fname, ex)
            entry = dict(ex.meta)
            entry["file"] = f"examples/{fname}"
            entry["subset"] = subset_of[song.id]
            entries.append(entry)

    manifest = {
        "seed": seed,
        "profile": profile.to_dict(),
        "split": subsets,
        "examples": entries,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_manifest(corpus_dir) -> dict:
    with open(Path(corpus_dir) / "manifest.json") as f:
        return json.load(f)


def corpus_examples(corpus_dir, subset: str = None) -> list:
    """Example paths from a corpus, optionally filtered by subset."""
    manifest = load_manifest(corpus_dir)
    root = Path(corpus_dir)
    return [
        root / e["file"]
        for e in manifest["examples"]
        if subset is None or e["subset"] == subset
    ]


def load_stem_song(song_dir) -> StemSong:
    """Read a song from the <dir>/{vocals,drums,bass,other}.wav convention."""
    song_dir = Path(song_dir)
    stems = {}
    for name in STEM_NAMES:
        audio = read_wav(song_dir / f"{name}.wav")
        mono = MultichannelAudio(audio.data.mean(axis=0), audio.sample_rate)
        stems[name] = mono
    rate = stems["vocals"].sample_rate
    return StemSong(song_dir.name, stems, rate)


def _tone_stem(rng, n, rate, f0_range, harmonics, vibrato=False):
    t = np.arange(n) / rate
    f0 = rng.uniform(*f0_range)
    sig = np.zeros(n)
    for k in range(1, harmonics + 1):
        phase = rng.uniform(0, 2 * np.pi)
        freq = f0 * k
        if vibrato:
            freq = freq * (1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 7) * t))
        sig += np.sin(2 * np.pi * freq * t + phase) / k
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.2, 0.7) * t)
    return sig * env


def _drum_stem(rng, n, rate):
    sig = np.zeros(n)
    rate_hz = rng.uniform(5.0, 9.0)
    period = int(rate / rate_hz)
    decay = np.exp(-np.arange(period) / (0.012 * rate))
    for start in range(0, n - period, period):
        burst = rng.standard_normal(period) * decay
        sig[start : start + period] += burst
    # band-limit the bursts so no single stem dominates the spectrum;
    # the pulse envelope keeps the transient character
    spec = np.fft.rfft(sig)
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    lo = rng.uniform(1300, 1700)
    hi = lo * rng.uniform(1.6, 1.9)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n)


def _noise_band_stem(rng, n, rate):
    # band-limit white noise by zeroing rfft bins outside a random band
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    # high, narrow band keeps this stem spectrally disjoint from the
    # vocal harmonics so the stems stay separable at desk scale
    lo = rng.uniform(4000, 6000)
    hi = lo * rng.uniform(1.2, 1.4)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n)


def _normalize_rms(sig, target=0.1):
    rms = np.sqrt(np.mean(sig**2))
    return sig * (target / rms) if rms > 0 else sig


def make_tiny_corpus(
    seed: int = 0,
    n_songs: int = 4,
    duration: float = 10.0,
    sample_rate: int = CANONICAL_RATE,
) -> list:
    """Procedural stand-in corpus: spectrally distinct synthetic stems.

    vocals: harmonic tone with vibrato; drums: decaying noise bursts;
    bass: low sine; other: band-passed noise. Deterministic under seed.
    """
    n = int(duration * sample_rate)
    songs = []
    for i in range(n_songs):
        rng = np.random.default_rng([seed, 3, i])
        stems = {
            "vocals": _tone_stem(rng, n, sample_rate, (300, 550), 2, vibrato=True),
            "drums": _drum_stem(rng, n, sample_rate),
            "bass": _tone_stem(rng, n, sample_rate, (55, 110), 2),
            "other": _noise_band_stem(rng, n, sample_rate),
        }
        stems = {
            k: MultichannelAudio(_normalize_rms(v), sample_rate)
            for k, v in stems.items()
        }
        songs.append(StemSong(f"tiny{i:02d}", stems, sample_rate))
    return songs
