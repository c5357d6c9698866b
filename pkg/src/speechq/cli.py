"""Command-line entry point: simulate, train, predict, eval.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as dt
from . import labels as lb
from . import model as mdl
from .config import ConfigError, RunConfig
from .data import ManifestError
from .signal import WavFormatError, Waveform, load_wav, save_wav
from .train import (
    NumericalDivergence,
    evaluate_entries,
    load_run_checkpoint,
    run_training,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors raise instead of exiting with code 2."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="speechq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic labeled dataset")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None)

    p_train = sub.add_parser("train", help="train a model on a manifest")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--checkpoint", default=None, help="resume from this checkpoint")

    p_pred = sub.add_parser("predict", help="score WAV files with a trained model")
    p_pred.add_argument("wavs", nargs="+")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--decoder", choices=("expect", "max"), default="expect")
    p_pred.add_argument("--dist", action="store_true", help="also print the class distribution")

    p_eval = sub.add_parser("eval", help="evaluate a trained model against manifest labels")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--decoder", choices=("expect", "max"), default="expect")
    p_eval.add_argument("--out", default=None, help="also write the reports to this file")
    return parser


def cmd_simulate(args) -> int:
    run = RunConfig.from_file(args.config, overrides={"seed": args.seed, "out": args.out})
    sim = run.simulate
    if args.seed is not None:
        sim.seed = args.seed
    out_dir = args.out or run.out_dir
    wav_dir = os.path.join(out_dir, "wavs")
    os.makedirs(wav_dir, exist_ok=True)
    rate = run.model.sample_rate
    rirs = [load_wav(p) for p in sim.rir_paths]

    def make_entry(index: int):
        rng = np.random.default_rng([sim.seed, index])
        kind = dt.SYNTH_KINDS[int(rng.integers(0, len(dt.SYNTH_KINDS)))]
        clean = dt.synth_clean(kind, sim.duration_seconds, seed=int(rng.integers(1 << 31)), sample_rate=rate)
        if rirs:
            clean = dt.convolve_rir(clean, rirs[int(rng.integers(0, len(rirs)))])
        noise = dt.synth_noise(sim.duration_seconds, seed=int(rng.integers(1 << 31)), sample_rate=rate)
        snr = float(rng.uniform(sim.snr_lo, sim.snr_hi))
        degraded, clean_ref = dt.mix_at_snr(clean, noise, snr)
        perturbed = bool(rng.uniform() < sim.perturb_prob)
        if perturbed:
            degraded = dt.perturb_spectrogram(degraded, seed=int(rng.integers(1 << 31)))
            n = min(len(degraded), len(clean_ref))
            degraded = Waveform(degraded.samples[:n], rate)
            clean_ref = Waveform(clean_ref.samples[:n], rate)
        label = dt.proxy_label(clean_ref, degraded)
        deg_name = f"entry_{index:05d}_degraded.wav"
        cln_name = f"entry_{index:05d}_clean.wav"
        save_wav(os.path.join(wav_dir, deg_name), degraded)
        save_wav(os.path.join(wav_dir, cln_name), clean_ref)
        return (os.path.join("wavs", deg_name), os.path.join("wavs", cln_name), label)

    # Splits are disjoint by construction: the holdout continues the index
    # range, so entry randomness never overlaps the training split.
    train_records = [make_entry(i) for i in range(sim.count)]
    dt.save_manifest(os.path.join(out_dir, "manifest.tsv"), train_records)
    print(f"wrote {len(train_records)} entries to {os.path.join(out_dir, 'manifest.tsv')}")
    if sim.holdout_count > 0:
        holdout = [make_entry(sim.count + i) for i in range(sim.holdout_count)]
        dt.save_manifest(os.path.join(out_dir, "manifest_holdout.tsv"), holdout)
        print(
            f"wrote {len(holdout)} entries to {os.path.join(out_dir, 'manifest_holdout.tsv')}"
        )
    return EXIT_OK


def cmd_train(args) -> int:
    run = RunConfig.from_file(args.config, overrides={"seed": args.seed, "out": args.out})
    if run.manifest is None:
        raise ConfigError("training requires [data] manifest")
    entries = dt.load_manifest(run.manifest, sample_rate=run.model.sample_rate)
    if not entries:
        raise ManifestError(f"{run.manifest}: no usable entries")
    val_entries = None
    if run.val_manifest:
        val_entries = dt.load_manifest(run.val_manifest, sample_rate=run.model.sample_rate)
    result = run_training(
        run,
        entries,
        val_entries=val_entries,
        out_dir=args.out or run.out_dir,
        resume_from=args.checkpoint,
        log_stream=print,
    )
    print(f"final total loss {result.final_total:.6f} after {result.steps} steps")
    print(f"checkpoints: {result.final_checkpoint} (final), {result.best_checkpoint} (best)")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, quant, params, _opt, _step = load_run_checkpoint(args.checkpoint)
    for path in args.wavs:
        wave = load_wav(path)
        if wave.sample_rate != cfg.sample_rate:
            raise WavFormatError(
                f"{path}: sample rate {wave.sample_rate} does not match model rate {cfg.sample_rate}"
            )
        out = mdl.forward(wave, cfg, params, mode="eval")
        s_e = lb.decode_expect(out.distribution, quant)
        s_m = lb.decode_max(out.distribution, quant)
        # Both scores always appear; the selected decoder's comes first.
        first, second = (s_e, s_m) if args.decoder == "expect" else (s_m, s_e)
        line = f"{path}\t{first:.6f}\t{second:.6f}"
        if args.dist:
            line += "\t" + ",".join(f"{p:.6g}" for p in out.distribution)
        print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, quant, params, _opt, _step = load_run_checkpoint(args.checkpoint)
    entries = dt.load_manifest(args.manifest, sample_rate=cfg.sample_rate)
    if not entries:
        raise ManifestError(f"{args.manifest}: no usable entries")
    reports = evaluate_entries(cfg, quant, params, entries)
    order = ("expect", "max") if args.decoder == "expect" else ("max", "expect")
    lines = [reports[name].to_record(decoder=name) for name in order]
    for line in lines:
        print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "simulate": cmd_simulate,
            "train": cmd_train,
            "predict": cmd_predict,
            "eval": cmd_eval,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, WavFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalDivergence, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
