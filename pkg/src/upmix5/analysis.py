"""Latent-space disentanglement analysis.

Builds a grid of (song, panning) conditions, encodes segments from every
cell, and summarizes the latent geometry: activation correlations, a 2-D
PCA projection, and cluster spread grouped by song vs by panning. If the
latent captures panning rather than music, same-panning clusters are tight
(small spread) and same-song groups are scattered (large spread).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import CorpusProfile, StemSong, sample_panning_config, synthesize_example
from .dsp import extract_segments
from .audio_io import MultichannelAudio
from .model import SpatialVAE
from .vbap import PanningConfig


@dataclass(frozen=True)
class LatentRecord:
    mu: np.ndarray
    song_id: str
    panning_id: str
    segment_index: int


def latent_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation between two activation vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length vectors with >= 2 dims")
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac @ ac) * (bc @ bc))
    if denom == 0.0:
        raise ValueError("zero-variance input")
    return float(np.clip(ac @ bc / denom, -1.0, 1.0))


def pca_project(records: list, dims: int = 2):
    """PCA of the mu vectors; returns (coords (N, dims), explained ratios).

    Sign convention: each component's largest-magnitude entry is positive.
    """
    if len(records) < max(dims, 3):
        raise ValueError("need at least 3 records (and >= dims)")
    x = np.stack([r.mu for r in records]).astype(np.float64)
    x -= x.mean(axis=0)
    cov = x.T @ x / max(len(records) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    evals = np.maximum(evals, 0.0)
    for j in range(evecs.shape[1]):
        k = np.argmax(np.abs(evecs[:, j]))
        if evecs[k, j] < 0:
            evecs[:, j] = -evecs[:, j]
    coords = x @ evecs[:, :dims]
    total = evals.sum()
    ratios = evals[:dims] / total if total > 0 else np.zeros(dims)
    return coords, ratios


def cluster_spread(records: list, coords: np.ndarray, grouping: str) -> float:
    """Mean over groups of the RMS distance to the group centroid.

    grouping: "by_song" or "by_panning". Singleton groups are skipped.
    """
    if grouping == "by_song":
        keys = [r.song_id for r in records]
    elif grouping == "by_panning":
        keys = [r.panning_id for r in records]
    else:
        raise ValueError(f"unknown grouping {grouping!r}")

    spreads = []
    for key in sorted(set(keys)):
        pts = coords[[i for i, k in enumerate(keys) if k == key]]
        if len(pts) < 2:
            continue
        centroid = pts.mean(axis=0)
        spreads.append(np.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1))))
    if not spreads:
        raise ValueError("no group has >= 2 members")
    return float(np.mean(spreads))


@dataclass
class StudyConfig:
    n_pannings: int = 5
    segments_per_cell: int = 4
    seed: int = 0


def run_latent_study(
    model: SpatialVAE,
    songs: list,
    profile: CorpusProfile,
    cfg: StudyConfig = StudyConfig(),
) -> dict:
    """Encode a songs x pannings grid and compute the disentanglement stats."""
    if not songs:
        raise ValueError("empty study")
    pan_rng = np.random.default_rng([cfg.seed, 10])
    pannings = {
        f"pan{p:02d}": sample_panning_config(pan_rng) for p in range(cfg.n_pannings)
    }

    records = []
    with torch.no_grad():
        for song in songs:
            mix = MultichannelAudio(
                sum(s.data for s in song.stem_list()), song.sample_rate
            )
            segs = extract_segments(mix, profile.seg_samples, song.stem_list())
            segs = segs[: cfg.segments_per_cell]
            for pan_id, pan in pannings.items():
                for seg in segs:
                    ex = synthesize_example(song, seg, pan,
                                            sample_panning_config(pan_rng), profile)
                    mu, _ = model.encode(torch.from_numpy(ex.enc_input).float()[None])
                    records.append(LatentRecord(
                        mu[0].numpy().astype(np.float64), song.id, pan_id,
                        seg[0] // profile.seg_samples,
                    ))

    coords, ratios = pca_project(records)
    by_song = cluster_spread(records, coords, "by_song")
    by_panning = cluster_spread(records, coords, "by_panning")

    same_pan = _mean_abs_corr(records, lambda x, y: x.panning_id == y.panning_id
                              and x.song_id != y.song_id)
    same_song = _mean_abs_corr(records, lambda x, y: x.song_id == y.song_id
                               and x.panning_id != y.panning_id)

    return {
        "records": records,
        "coords": coords,
        "explained_variance": ratios.tolist(),
        "spread_by_song": by_song,
        "spread_by_panning": by_panning,
        "spread_ratio": by_song / by_panning,
        "mean_abs_corr_same_panning": same_pan,
        "mean_abs_corr_same_song": same_song,
    }


def _mean_abs_corr(records, pair_filter, max_pairs: int = 2000) -> float:
    vals = []
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            if pair_filter(records[i], records[j]):
                vals.append(abs(latent_correlation(records[i].mu, records[j].mu)))
                if len(vals) >= max_pairs:
                    return float(np.mean(vals))
    return float(np.mean(vals)) if vals else float("nan")


def export_plot_data(study: dict, out_dir) -> list:
    """CSV artifacts: latent activations, PCA scatter, spread summary."""
    records = study["records"]
    if not records:
        raise ValueError("empty study")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    j = len(records[0].mu)

    paths = []

    def _write(name, header, rows):
        path = out_dir / name
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)
        paths.append(path)

    act_rows = sorted(
        (r.song_id, r.panning_id, r.segment_index, *r.mu) for r in records
    )
    _write("activations_by_panning.csv",
           ["song_id", "panning_id", "segment_index"] + [f"mu_{d}" for d in range(j)],
           act_rows)
    # same activations keyed song-first vs panning-first mirrors the paired
    # activation plots (same song/different panning vs same panning/different song)
    act_rows2 = sorted(
        (r.panning_id, r.song_id, r.segment_index, *r.mu) for r in records
    )
    _write("activations_by_song.csv",
           ["panning_id", "song_id", "segment_index"] + [f"mu_{d}" for d in range(j)],
           act_rows2)

    scatter = sorted(
        (float(x), float(y), r.song_id, r.panning_id)
        for (x, y), r in zip(study["coords"], records)
    )
    _write("pca_scatter.csv", ["x", "y", "song_id", "panning_id"], scatter)

    _write("spread_summary.csv",
           ["spread_by_song", "spread_by_panning", "ratio"],
           [[study["spread_by_song"], study["spread_by_panning"],
             study["spread_ratio"]]])
    return paths
