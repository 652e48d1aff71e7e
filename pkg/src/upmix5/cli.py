"""Command-line entry point.

Subcommands: synth, train, transfer, blind, baseline, eval, analyze.
Every run writes its resolved configuration next to its primary output so
results stay reproducible. Exit codes: 0 success, 2 usage error, 1 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis, dataset, generate, metrics, model
from .audio_io import read_wav, write_wav
from .dsp import stft
from .vbap import STEM_NAMES, PanningConfig

log = logging.getLogger("upmix5")

ARCH_PRESETS = {"toy": model.TOY_ARCH, "full": model.FULL_ARCH}
PROFILE_PRESETS = {"toy": dataset.TOY_PROFILE, "full": dataset.FULL_PROFILE}


def _record_run_config(out_path, args):
    """Drop <output>.run.json with the resolved flags for the run."""
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    path = Path(str(out_path).rstrip("/") + ".run.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(resolved, f, indent=1, sort_keys=True, default=str)


def _load_songs(args):
    if args.tiny:
        return dataset.make_tiny_corpus(seed=args.seed, n_songs=args.tiny_songs)
    root = Path(args.stems_dir)
    dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not dirs:
        raise RuntimeError(f"no song directories under {root}")
    return [dataset.load_stem_song(d) for d in dirs]


def cmd_synth(args):
    profile = PROFILE_PRESETS[args.profile]
    songs = _load_songs(args)
    manifest = dataset.build_corpus(
        songs,
        args.out,
        split=tuple(args.split),
        segments_per_song=args.segments,
        seed=args.seed,
        profile=profile,
    )
    _record_run_config(args.out, args)
    log.info("wrote %d examples to %s", len(manifest["examples"]), args.out)


def _examples_for(corpus_dir, subset):
    paths = dataset.corpus_examples(corpus_dir, subset)
    return [dataset.load_example(p) for p in paths]


def _arch_for_corpus(preset_name, manifest):
    profile = dataset.CorpusProfile.from_dict(manifest["profile"])
    preset = ARCH_PRESETS[preset_name]
    cfg = dataclasses.replace(
        preset, freq_bins=profile.freq_bins, frames=profile.frames
    )
    return cfg, profile


def cmd_train(args):
    manifest = dataset.load_manifest(args.corpus)
    cfg, profile = _arch_for_corpus(args.arch, manifest)
    net = model.init_params(cfg, seed=args.seed)

    train_ex = _examples_for(args.corpus, "train")
    val_ex = _examples_for(args.corpus, "val")
    out = Path(args.out_ckpt)
    out.parent.mkdir(parents=True, exist_ok=True)
    tc = model.TrainConfig(
        lr=args.lr, epochs=args.epochs, beta=args.beta,
        beta_warmup_epochs=args.beta_warmup_epochs, free_bits=args.free_bits,
        batch_size=args.batch_size, seed=args.seed,
        checkpoint_dir=str(out.parent / f"{out.stem}_epochs"),
    )
    Path(tc.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    history = model.train(net, train_ex, val_ex, tc)
    model.save_checkpoint(out, net, {
        "profile": profile.to_dict(),
        "train_config": dataclasses.asdict(tc),
        "history": history,
    })
    _record_run_config(out, args)
    log.info("final train loss %.6g", history["train"][-1])


def _load_model_and_profile(ckpt_path):
    net, meta = model.load_checkpoint(ckpt_path)
    if "profile" not in meta:
        raise RuntimeError(f"{ckpt_path} lacks profile metadata; "
                           "use a final checkpoint written by `upmix5 train`")
    return net, dataset.CorpusProfile.from_dict(meta["profile"])


def cmd_transfer(args):
    net, profile = _load_model_and_profile(args.ckpt)
    stereo = read_wav(args.stereo)
    style = read_wav(args.style_ref)
    out = generate.style_transfer(net, style, stereo, profile)
    write_wav(args.out, out, "32f")
    _record_run_config(args.out, args)


def cmd_blind(args):
    net, profile = _load_model_and_profile(args.ckpt)
    stereo = read_wav(args.stereo)
    out = generate.blind_upmix(net, stereo, profile, seed=args.seed)
    write_wav(args.out, out, "32f")
    _record_run_config(args.out, args)


def cmd_baseline(args):
    stereo = read_wav(args.stereo)
    out = generate.baseline_upmix(stereo)
    write_wav(args.out, out, "32f")
    _record_run_config(args.out, args)


def cmd_eval(args):
    ref = read_wav(args.ref)
    est = read_wav(args.est)
    n = min(ref.samples_per_channel, est.samples_per_channel)
    ref_data = ref.data[:, :n]
    est_data = est.data[:, :n]

    profile = PROFILE_PRESETS[args.profile]
    from .audio_io import MultichannelAudio

    sdr = metrics.sd_sdr(est_data, ref_data)
    ref_mag = np.abs(stft(MultichannelAudio(ref_data, ref.sample_rate), profile.stft))
    est_mag = np.abs(stft(MultichannelAudio(est_data, est.sample_rate), profile.stft))
    wild_val = metrics.wild(ref_mag, est_mag)

    angle = {"per_stem_deg": {n_: None for n_ in STEM_NAMES}, "mean_deg": None}
    if args.stems_dir and args.ref_config:
        song = dataset.load_stem_song(args.stems_dir)
        with open(args.ref_config) as f:
            ref_cfg = PanningConfig(json.load(f))
        stems = [
            MultichannelAudio(song.stems[n_].data[:, :n], song.sample_rate)
            for n_ in STEM_NAMES
        ]
        angle = metrics.angle_difference_report(
            ref_cfg, MultichannelAudio(est_data, est.sample_rate), stems
        )

    report = metrics.MetricReport(
        id=Path(args.est).stem,
        sd_sdr_db=sdr,
        wild=wild_val,
        mean_angle_diff_deg=angle["mean_deg"],
        per_stem_angle_diff=angle["per_stem_deg"],
        meta={"hist": metrics.DEFAULT_HIST.to_dict(), "profile": profile.to_dict()},
    )
    out = Path(args.out_report)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_reports([report], json_path=out.with_suffix(".json"),
                          csv_path=out.with_suffix(".csv"))
    _record_run_config(args.out_report, args)
    log.info("sd_sdr=%.2f dB wild=%.3f mean_angle=%s",
             sdr, wild_val, angle["mean_deg"])


def cmd_analyze(args):
    net, profile = _load_model_and_profile(args.ckpt)
    study_cfg = analysis.StudyConfig(seed=args.seed)
    n_songs = 5
    if args.study_config:
        with open(args.study_config) as f:
            raw = json.load(f)
        n_songs = raw.pop("n_songs", n_songs)
        study_cfg = analysis.StudyConfig(**{**dataclasses.asdict(study_cfg), **raw})
    songs = dataset.make_tiny_corpus(seed=study_cfg.seed, n_songs=n_songs)
    study = analysis.run_latent_study(net, songs, profile, study_cfg)
    paths = analysis.export_plot_data(study, args.out_dir)
    _record_run_config(args.out_dir, args)
    log.info("wrote %s; spread ratio %.3f",
             [p.name for p in paths], study["spread_ratio"])


def _split_fractions(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3 or abs(sum(parts) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError("split must be three fractions summing to 1")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="upmix5",
        description="Stereo-to-5-channel upmixing workbench",
    )
    parser.add_argument("--config", help="JSON file with default flag values")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=0,
                        help="cap torch worker threads (0 = library default)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a training corpus")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--stems-dir", help="directory of <song>/{vocals,...}.wav")
    src.add_argument("--tiny", action="store_true",
                     help="use the built-in procedural corpus")
    p.add_argument("--tiny-songs", type=int, default=6)
    p.add_argument("--out", required=True)
    p.add_argument("--segments", type=int, default=8, help="segments per song")
    p.add_argument("--split", type=_split_fractions, default=[0.7, 0.1, 0.2])
    p.add_argument("--profile", choices=PROFILE_PRESETS, default="full")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the VAE on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--beta-warmup-epochs", type=int, default=0,
                   help="anneal beta linearly from 0 over this many epochs")
    p.add_argument("--free-bits", type=float, default=0.0,
                   help="per-dimension KL floor in nats")
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--arch", choices=ARCH_PRESETS, default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="style-transfer upmix")
    p.add_argument("--stereo", required=True)
    p.add_argument("--style-ref", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("blind", help="blind upmix from a prior sample")
    p.add_argument("--stereo", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blind)

    p = sub.add_parser("baseline", help="model-free all-channel-stereo upmix")
    p.add_argument("--stereo", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="objective metrics for an upmix")
    p.add_argument("--ref", required=True, help="reference 5-channel WAV")
    p.add_argument("--est", required=True, help="estimated 5-channel WAV")
    p.add_argument("--stems-dir", help="song stem directory for angle metrics")
    p.add_argument("--ref-config", help="JSON stem->azimuth ground truth")
    p.add_argument("--out-report", required=True, help="report path prefix")
    p.add_argument("--profile", choices=PROFILE_PRESETS, default="full")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="latent disentanglement study")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--study-config", help="JSON study settings")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # config file supplies defaults; explicit flags still win
    args, _ = parser.parse_known_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as f:
            overrides = json.load(f)
        parser.set_defaults(**overrides)
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    if args.threads > 0:
        torch.set_num_threads(args.threads)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
