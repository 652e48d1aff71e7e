"""Objective evaluation: SD-SDR, WILD, and panning-angle error.

WILD sums, over the 10 channel pairs of a 5-channel spectrogram, the 1-D
Wasserstein distance between the interchannel-level-difference histograms
of reference and estimate. Angle error recovers per-stem directions by
least-squares decomposition of each channel onto the stem waveforms.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .audio_io import MultichannelAudio
from .vbap import (
    STEM_NAMES,
    DEFAULT_LAYOUT,
    PanningConfig,
    SpeakerLayout,
    circular_distance_deg,
    estimate_direction_from_gains,
)

SDR_CAP_DB = 300.0

CHANNEL_PAIRS = tuple(combinations(range(5), 2))  # 10 ordered (i < j) pairs


@dataclass(frozen=True)
class HistogramSpec:
    """Shared binning for ILD histograms; WILD values are only comparable
    under a single spec, so it is recorded in every report."""

    bins: int = 120
    lo_db: float = -60.0
    hi_db: float = 60.0

    def __post_init__(self):
        if self.bins < 1 or self.hi_db <= self.lo_db:
            raise ValueError("degenerate histogram spec")

    @property
    def bin_width(self) -> float:
        return (self.hi_db - self.lo_db) / self.bins

    def edges(self) -> np.ndarray:
        return np.linspace(self.lo_db, self.hi_db, self.bins + 1)

    def to_dict(self) -> dict:
        return {"bins": self.bins, "lo_db": self.lo_db, "hi_db": self.hi_db}


DEFAULT_HIST = HistogramSpec()


def sd_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-dependent SDR in dB; multichannel inputs are flattened.

    10*log10(||a*ref||^2 / ||est - ref||^2) with a = <est, ref>/||ref||^2.
    Perfect reconstruction is reported as the +300 dB sentinel.
    """
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError("length mismatch")
    ref_energy = float(ref @ ref)
    if ref_energy <= 0.0:
        raise ValueError("all-zero reference")
    alpha = float(est @ ref) / ref_energy
    signal = alpha * alpha * ref_energy
    err = est - ref
    distortion = float(err @ err)
    if distortion <= signal * 10.0 ** (-SDR_CAP_DB / 10.0):
        return SDR_CAP_DB
    return 10.0 * np.log10(signal / distortion)


def ild_tensor(
    spec5: np.ndarray, floor_eps: float = None
) -> np.ndarray:
    """Pairwise level differences in dB, shape (10, F, T).

    Magnitudes are floored before the ratio; the default floor is 1e-8
    relative to the tensor's max, so silent bins give 0 dB instead of inf.
    """
    spec5 = np.asarray(spec5, dtype=np.float64)
    if spec5.shape[0] != 5 or np.any(spec5 < 0):
        raise ValueError("need a nonnegative 5-channel magnitude tensor")
    if floor_eps is None:
        floor_eps = 1e-8 * float(spec5.max()) if spec5.max() > 0 else 1e-30
    floored = np.maximum(spec5, floor_eps)
    planes = [
        20.0 * np.log10(floored[i] / floored[j]) for i, j in CHANNEL_PAIRS
    ]
    return np.stack(planes)


def ild_histogram(plane: np.ndarray, hist: HistogramSpec = DEFAULT_HIST) -> np.ndarray:
    """Mass-normalized histogram; outliers are clamped into the end bins."""
    clamped = np.clip(plane.ravel(), hist.lo_db, hist.hi_db)
    counts, _ = np.histogram(clamped, bins=hist.edges())
    return counts / counts.sum()


def wasserstein_1d(p: np.ndarray, q: np.ndarray, bin_width: float = 1.0) -> float:
    """W1 between two histograms on the same uniform grid (CDF L1 distance)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("histograms must share the bin grid")
    return float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q)))) * bin_width


def wild(
    ref5: np.ndarray, est5: np.ndarray, hist: HistogramSpec = DEFAULT_HIST
) -> float:
    """Sum over the 10 channel pairs of W1 between ILD histograms."""
    if np.asarray(ref5).shape != np.asarray(est5).shape:
        raise ValueError("shape mismatch")
    ref_ild = ild_tensor(ref5)
    est_ild = ild_tensor(est5)
    total = 0.0
    for k in range(len(CHANNEL_PAIRS)):
        total += wasserstein_1d(
            ild_histogram(ref_ild[k], hist),
            ild_histogram(est_ild[k], hist),
            hist.bin_width,
        )
    return total


@dataclass
class Decomposition:
    gains: np.ndarray  # (5, 4) nonnegative
    raw_gains: np.ndarray  # before clamping
    flagged_channels: list  # channels where the stem matrix was rank-deficient


def decompose_channels(mix5: MultichannelAudio, stems: list) -> Decomposition:
    """Least-squares gains expressing each channel as a stem combination.

    Normal equations with light Tikhonov damping; negative entries are
    clamped to 0 afterward since VBAP gains are nonnegative.
    """
    if mix5.channels != 5:
        raise ValueError("mix must be 5-channel")
    s = np.stack([st.data.mean(axis=0) for st in stems], axis=1)  # (N, 4)
    if s.shape[0] != mix5.samples_per_channel:
        raise ValueError("stems must match the mix length")
    gram = s.T @ s
    if not np.any(np.diag(gram) > 0):
        raise ValueError("all stems silent")
    lam = 1e-8 * np.trace(gram) / gram.shape[0]
    damped = gram + lam * np.eye(gram.shape[0])

    # rank deficiency (e.g. duplicated stems) is flagged, not fatal
    cond = np.linalg.cond(gram)
    deficient = not np.isfinite(cond) or cond > 1e10

    raw = np.linalg.solve(damped, s.T @ mix5.data.T).T  # (5, 4)
    flagged = list(range(5)) if deficient else []
    return Decomposition(np.maximum(raw, 0.0), raw, flagged)


def angle_difference_report(
    ref_config: PanningConfig,
    mix5: MultichannelAudio,
    stems: list,
    layout: SpeakerLayout = DEFAULT_LAYOUT,
    stem_names: tuple = STEM_NAMES,
) -> dict:
    """Per-stem and mean angle error between configured and estimated directions.

    Silent stems are excluded from the mean and reported as None.
    """
    decomp = decompose_channels(mix5, stems)
    per_stem = {}
    diffs = []
    for k, name in enumerate(stem_names):
        stem_energy = float(np.sum(stems[k].data**2))
        gains = decomp.gains[:, k]
        if stem_energy <= 0.0 or not np.any(gains > 0):
            per_stem[name] = None
            continue
        est = estimate_direction_from_gains(gains, layout)
        d = circular_distance_deg(est, ref_config[name])
        per_stem[name] = d
        diffs.append(d)
    mean = float(np.mean(diffs)) if diffs else None
    return {
        "per_stem_deg": per_stem,
        "mean_deg": mean,
        "flagged_channels": decomp.flagged_channels,
    }


@dataclass
class MetricReport:
    id: str
    sd_sdr_db: float
    wild: float
    mean_angle_diff_deg: float
    per_stem_angle_diff: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "sd_sdr_db": self.sd_sdr_db,
            "wild": self.wild,
            "mean_angle_diff_deg": self.mean_angle_diff_deg,
            "per_stem_angle_diff": self.per_stem_angle_diff,
            "meta": self.meta,
        }


CSV_COLUMNS = [
    "id", "sd_sdr_db", "wild", "mean_angle_diff_deg",
    *[f"angle_diff_{n}_deg" for n in STEM_NAMES],
]


def write_reports(reports: list, json_path=None, csv_path=None) -> None:
    """JSON (one object per example) and CSV summary, stably ordered by id."""
    reports = sorted(reports, key=lambda r: r.id)
    if json_path is not None:
        with open(json_path, "w") as f:
            json.dump([r.to_dict() for r in reports], f, indent=1, sort_keys=True)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for r in reports:
                row = [r.id, r.sd_sdr_db, r.wild, r.mean_angle_diff_deg]
                row += [(r.per_stem_angle_diff or {}).get(n) for n in STEM_NAMES]
                writer.writerow(row)
