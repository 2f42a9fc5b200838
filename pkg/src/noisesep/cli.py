"""Command-line entry point: ``noisesep <command> [options]``.

Exit codes: 0 success, 1 invalid arguments / contract violation, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .autodiff import ShapeError
from .config import from_mapping, read_kv_file
from .contrastive import PCLConfig
from .errors import ConfigError, ContractError
from .evaluation import evaluate, export_spectrogram
from .separator import SeparatorConfig, SeparatorModel, load_checkpoint, separate
from .signals import DatasetConfig, make_dataset, read_manifest, read_wav, write_wav
from .trainer import TrainConfig, Trainer, TrainingAborted

SECTIONS = {"data": DatasetConfig, "model": SeparatorConfig, "train": TrainConfig, "pcl": PCLConfig}
ALIASES = {"pcl.lambda": "pcl.lam"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def load_config(path) -> dict[str, dict[str, str]]:
    """Split a ``section.key=value`` file into per-section string maps."""
    out: dict[str, dict[str, str]] = {k: {} for k in SECTIONS}
    if path is None:
        return out
    for key, value in read_kv_file(path).items():
        key = ALIASES.get(key, key)
        section, dot, name = key.partition(".")
        if not dot or section not in SECTIONS:
            raise ConfigError(f"{path}: unknown key {key!r} (expected one of {sorted(SECTIONS)}.<field>)")
        out[section][name] = value
    for section, cls in SECTIONS.items():
        if section != "data":
            from_mapping(cls, out[section], strict=True)  # validate early
    return out


def _build(cls, values: dict[str, str], **overrides):
    vals = dict(values)
    vals.update({k: str(v) for k, v in overrides.items() if v is not None})
    return from_mapping(cls, vals, strict=True)


# -- commands -------------------------------------------------------------------

def cmd_mix(args, cfg) -> int:
    dc = _build(DatasetConfig, {"out_dir": str(args.out), **cfg["data"]}, seed=args.seed,
                num_items=args.num_items, split=args.split, num_speakers=args.num_speakers,
                duration_s=args.duration)
    manifest = make_dataset(dc)
    print(f"wrote {len(manifest)} items -> {manifest.path}")
    return 0


def cmd_train(args, cfg) -> int:
    train = read_manifest(args.train).load_all()
    val = read_manifest(args.val).load_all() if args.val else None
    ckpt_dir = Path(args.out) / "checkpoints"
    if args.resume:
        trainer = Trainer.resume(args.resume, train, val, checkpoint_dir=ckpt_dir,
                                 **({"epochs": args.epochs} if args.epochs is not None else {}))
    else:
        seed = args.seed if args.seed is not None else int(cfg["train"].get("seed", 0))
        mcfg = _build(SeparatorConfig, cfg["model"])
        pcfg = _build(PCLConfig, cfg["pcl"])
        tcfg = _build(TrainConfig, cfg["train"], seed=seed, epochs=args.epochs,
                      max_steps=args.max_steps, checkpoint_dir=ckpt_dir)
        model = SeparatorModel.init(mcfg, seed)
        trainer = Trainer(model, train, tcfg, pcfg, val)
    last = trainer.train()
    print(f"steps={trainer.state.step} epochs={trainer.state.epoch} lr={trainer.state.lr:g}")
    print(f"checkpoint {last}")
    return 0


def cmd_separate(args, cfg) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    sig = read_wav(args.input)
    sep = separate(model, sig)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for i, s in enumerate(sep.signals(sig.sample_rate)):
        name = f"{stem}_noise.wav" if (sep.noise is not None and i == model.config.C) else f"{stem}_s{i + 1}.wav"
        info = write_wav(out / name, s, args.bit_depth)
        print(info.path)
    return 0


def cmd_evaluate(args, cfg) -> int:
    out_csv = Path(args.out) / "eval.csv"
    rep = evaluate(args.checkpoint, args.manifest, out_csv, workers=args.workers)
    ns = rep.mean_noise_si_snr
    print(f"items={len(rep.items)} si_snri_db={rep.mean_si_snri:.3f} sdri_db={rep.mean_sdri:.3f}"
          + (f" noise_si_snr_db={ns:.3f}" if ns is not None else ""))
    print(f"report {out_csv}")
    return 0


def cmd_gradcheck(args, cfg) -> int:
    from .gradsuite import run_suite

    res = run_suite(step=args.step, tolerance=args.tolerance,
                    seed=args.seed or 0, echo=print if args.verbose else None)
    status = "PASS" if res.passed else "FAIL"
    print(f"checks={len(res.reports)} max_rel_err={res.max_rel_err:.3e} seconds={res.seconds:.1f} {status}")
    return 0 if res.passed else 1


def cmd_spectrogram(args, cfg) -> int:
    sig = read_wav(args.input)
    pgm, csv_path, spec = export_spectrogram(sig, Path(args.out) / Path(args.input).stem,
                                             args.frame, args.hop)
    print(f"frames={spec.magnitude.shape[0]} bins={spec.magnitude.shape[1]}")
    print(pgm)
    print(csv_path)
    return 0


def param_counts(config: SeparatorConfig) -> tuple[int, int]:
    """Parameter counts with the noise output off and on."""
    off = SeparatorModel.init(replace(config, noise_speaker=False))
    on = SeparatorModel.init(replace(config, noise_speaker=True))
    return off.num_parameters(), on.num_parameters()


def cmd_params(args, cfg) -> int:
    mcfg = _build(SeparatorConfig, cfg["model"])
    off, on = param_counts(mcfg)
    delta = on - off
    print(f"params_without_noise_speaker={off}")
    print(f"params_with_noise_speaker={on}")
    print(f"delta={delta} delta_pct={100.0 * delta / off:.3f}")
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="section.key=value file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output root directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="noisesep", description="Mask-based speech separation with an explicit noise output.", parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("mix", parents=[common], help="synthesize a dataset and manifest")
    s.add_argument("--num-items", type=int)
    s.add_argument("--num-speakers", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--split")
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("train", parents=[common], help="train a separator")
    s.add_argument("--train", type=Path, required=True, help="training manifest")
    s.add_argument("--val", type=Path, help="validation manifest")
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--resume", type=Path, help="continue from a checkpoint")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", parents=[common], help="separate one WAV file")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--bit-depth", choices=("pcm16", "float32"), default="float32")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a manifest")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", parents=[common], help="run the gradient-check battery")
    s.add_argument("--step", type=float, default=1e-5)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("spectrogram", parents=[common], help="export a spectrogram as PGM + CSV")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--frame", type=int, default=256)
    s.add_argument("--hop", type=int, default=64)
    s.set_defaults(func=cmd_spectrogram)

    s = sub.add_parser("params", parents=[common], help="count parameters with and without the noise output")
    s.set_defaults(func=cmd_params)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    args.config = getattr(args, "config", None)
    args.seed = getattr(args, "seed", None)
    args.out = getattr(args, "out", Path("out"))
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ContractError, ShapeError, TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
