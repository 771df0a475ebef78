"""Command-line entry point: ``lrnoise <verb> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import NOISY_SUFFIX, DataError, PairSet, list_clean, load_images, load_pairs
from .metrics import akld
from .models import ArchitectureError, CheckpointError, Denoiser, Generator, load_params
from .noise_models import BaselineNoiseModel, LearnedModel, PhysicsModel, ReplayModel, fit_read_sigma
from .raw import (ParseError, ProfileSet, RawPatch, SensorProfile, format_profiles, load_profiles,
                  load_raw, parse_profiles, save_raw, write_pgm)
from .rng import RngStream
from .sensor import BaselineModel, baseline_noisy, physics_noisy
from .training import (DENOISER_LOG_COLUMNS, NOISE_LOG_COLUMNS, ConfigError, DivergenceError,
                       TrainConfig, TrainResult, format_log, load_config, synthesize_with_generator,
                       train_denoiser, train_noise_model)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

EVALUATE_HELP = """\
CSV columns: image_id, model, kld. One row per (image, model), then one
summary row per model with image_id "mean" holding the mean over images.
Model names: oracle-replay, oracle (fresh oracle-sensor draws, needs
--profile with oracle parameters), awgn, pg (read level moment-fitted on the
evaluated pairs), or a path to a noise-model checkpoint.
"""

TRAIN_HELP = """\
Writes the checkpoint, <out>.csv (per-epoch log) and <out>.manifest.json.
Noise-model log columns: {}.
Denoiser log columns: {}.
""".format(", ".join(NOISE_LOG_COLUMNS), ", ".join(DENOISER_LOG_COLUMNS))


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def file_hash(path: Path) -> str:
    """Git-style blob hash of a file's content."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def inputs_hash(paths: Sequence[Path]) -> dict:
    files = {str(p): file_hash(p) for p in sorted(paths, key=str)}
    combined = hashlib.sha1("".join(f"{k}\0{v}\n" for k, v in files.items()).encode()).hexdigest()
    return {"files": files, "combined": combined}


def write_manifest(path: Path, command: str, args: argparse.Namespace, inputs: Sequence[Path],
                   outputs: Sequence[Path], seed: int | None, config: str | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "config": config,
        "seed": seed,
        "inputs": inputs_hash(inputs),
        "outputs": [str(p) for p in outputs],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _file_key(name: str) -> int:
    # per-file stream key that does not depend on directory listing order
    return zlib.crc32(name.encode())


def _guard_outputs(paths: Sequence[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing[:3])}"
                         f"{' ...' if len(existing) > 3 else ''} (use --force)")


def _load_profile_file(path: str | None) -> ProfileSet | None:
    if path is None:
        return None
    try:
        return load_profiles(path)
    except FileNotFoundError:
        raise DataError(f"profile file {path} not found") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _header_profiles(paths: Sequence[Path]) -> ProfileSet:
    """Profiles recorded in LRF headers; files of one ISO must agree."""
    out: dict[int, SensorProfile] = {}
    for p in paths:
        prof = load_raw_profile(p)
        prev = out.setdefault(prof.iso, prof)
        if (prev.gain_K, prev.sigma_r) != (prof.gain_K, prof.sigma_r):
            raise DataError(f"{p}: profile for ISO {prof.iso} disagrees with other files")
    return ProfileSet.of(out.values())


def load_raw_profile(path: Path) -> SensorProfile:
    try:
        return load_raw(path)[1]
    except ParseError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        return load_config(path)
    except FileNotFoundError:
        raise DataError(f"config file {path} not found") from None


def _split_val(pairs: PairSet, count: int | None) -> tuple[PairSet, PairSet | None]:
    n = len(pairs)
    if count is None:
        count = min(16, n // 8)
    if count < 0 or count >= n:
        raise UsageError(f"--val-count must be in [0, {n - 1}]")
    if count == 0:
        return pairs, None
    return pairs.subset(slice(0, n - count)), pairs.subset(slice(n - count, n))


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    clean_paths = list_clean(args.clean)
    patches, isos = load_images(clean_paths)
    profiles = _load_profile_file(args.profile)
    mode = args.mode
    missing = sorted({iso for iso in isos if iso not in profiles})
    if missing:
        bad = [f"{p.name} (ISO {iso})" for p, iso in zip(clean_paths, isos) if iso in missing]
        raise DataError("no profile for: " + ", ".join(bad))
    if mode == "oracle":
        no_oracle = sorted({iso for iso in isos if profiles[iso].oracle is None})
        if no_oracle:
            raise DataError(f"profile lacks oracle noise parameters for ISO {no_oracle}")
    out = Path(args.out)
    targets = [out / f"{p.stem}{NOISY_SUFFIX}.lrf" for p in clean_paths]
    previews = [t.with_suffix(".pgm") for t in targets]
    manifest = out / "manifest.json"
    _guard_outputs(targets + previews + [manifest], args.force)
    out.mkdir(parents=True, exist_ok=True)
    for path, patch, iso, target, preview in zip(clean_paths, patches, isos, targets, previews):
        prof = profiles[iso]
        rng = RngStream(args.seed, (_file_key(path.name),))
        y = patch.signal()
        if mode == "oracle":
            d = physics_noisy(y, prof, patch.value_range, rng)
        else:
            d = baseline_noisy(y, prof, BaselineModel(mode), patch.value_range, rng)
        noisy = RawPatch.from_signal(np.rint(d), patch.black_level, patch.white_level)
        save_raw(noisy, prof, target)
        write_pgm(noisy, preview, args.ratio)
    write_manifest(manifest, "simulate", args, clean_paths + [Path(args.profile)],
                   targets + previews, args.seed)
    print(f"wrote {len(targets)} noisy images to {out}")
    return EXIT_OK


def _train_outputs(out: Path) -> tuple[Path, Path]:
    return out.with_suffix(".csv"), out.with_suffix(".manifest.json")


def _pair_inputs(directory: str) -> list[Path]:
    d = Path(directory)
    return sorted(d.glob("*.lrf"))


def cmd_train_denoiser(args) -> int:
    cfg = _load_config(args.config)
    pairs = load_pairs(args.pairs)
    train, val = _split_val(pairs, args.val_count)
    out = Path(args.out)
    log_path, man_path = _train_outputs(out)
    resume = _resume(args, out, log_path, man_path)

    def checkpoint(res: TrainResult):
        res.save(out)
        log_path.write_text(format_log(res.log, DENOISER_LOG_COLUMNS))
    res = train_denoiser(train, cfg, val, resume=resume, on_epoch=checkpoint)
    checkpoint(res)
    inputs = _pair_inputs(args.pairs) + ([Path(args.config)] if args.config else [])
    write_manifest(man_path, "train-denoiser", args, inputs, [out, log_path], cfg.seed, args.config)
    print(f"denoiser trained for {res.epochs_done} epochs -> {out}")
    return EXIT_OK


def _resume(args, out: Path, *others: Path) -> TrainResult | None:
    if args.resume:
        if not out.exists():
            raise UsageError(f"--resume given but {out} does not exist")
        return TrainResult.load(out)
    _guard_outputs([out, *others], args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    return None


def cmd_train_noise_model(args) -> int:
    cfg = _load_config(args.config)
    pairs = load_pairs(args.pairs)
    lrf_paths = _pair_inputs(args.pairs)
    profiles = _load_profile_file(args.profile) or _header_profiles(lrf_paths)
    pairs.check_profiles(profiles)
    denoiser = load_params(args.denoiser, "denoiser", expected_arch=Denoiser.create(RngStream(0)).arch)
    train, val = _split_val(pairs, args.val_count)
    out = Path(args.out)
    log_path, man_path = _train_outputs(out)
    resume = _resume(args, out, log_path, man_path)
    meta = {"profiles": format_profiles(profiles)}

    def checkpoint(res: TrainResult):
        res.meta = meta
        res.save(out)
        log_path.write_text(format_log(res.log, NOISE_LOG_COLUMNS))
    res = train_noise_model(train, profiles, denoiser, cfg, val, resume=resume, on_epoch=checkpoint)
    checkpoint(res)
    inputs = lrf_paths + [Path(args.denoiser)] + ([Path(args.config)] if args.config else [])
    if args.profile:
        inputs.append(Path(args.profile))
    write_manifest(man_path, "train-noise-model", args, inputs, [out, log_path], cfg.seed, args.config)
    print(f"noise model trained for {res.epochs_done} epochs -> {out}")
    return EXIT_OK


def load_noise_model(path: str | Path) -> tuple[Generator, ProfileSet]:
    """Generator and the profile table stored with a noise-model checkpoint."""
    try:
        res = TrainResult.load(path)
    except FileNotFoundError:
        raise DataError(f"model checkpoint {path} not found") from None
    if "generator" not in res.networks:
        raise CheckpointError(f"{path} holds no generator")
    text = res.meta.get("profiles")
    if not text:
        raise CheckpointError(f"{path} carries no profile table")
    return res.generator, parse_profiles(text)


def cmd_synthesize(args) -> int:
    gen, profiles = load_noise_model(args.model)
    if args.iso not in profiles:
        raise DataError(f"ISO {args.iso} is not in the model's profile table {profiles.isos()}")
    prof = profiles[args.iso]
    clean_paths = list_clean(args.clean)
    patches, _ = load_images(clean_paths)
    out = Path(args.out)
    targets = [out / f"{p.stem}{NOISY_SUFFIX}.lrf" for p in clean_paths]
    previews = [t.with_suffix(".pgm") for t in targets]
    manifest = out / "manifest.json"
    _guard_outputs(targets + previews + [manifest], args.force)
    out.mkdir(parents=True, exist_ok=True)
    for path, patch, target, preview in zip(clean_paths, patches, targets, previews):
        rng = RngStream(args.seed, (_file_key(path.name),))
        d = synthesize_with_generator(gen, patch.signal(), prof.gain_K, prof.sigma_r,
                                      patch.value_range, rng)
        noisy = RawPatch.from_signal(np.rint(d), patch.black_level, patch.white_level)
        save_raw(noisy, prof, target)
        write_pgm(noisy, preview, args.ratio)
    write_manifest(manifest, "synthesize", args, clean_paths + [Path(args.model)],
                   targets + previews, args.seed)
    print(f"wrote {len(targets)} synthetic noisy images to {out}")
    return EXIT_OK


def _eval_models(names: Sequence[str], pairs: PairSet, profiles: ProfileSet):
    models = []
    for name in names:
        if name == "oracle-replay":
            models.append(ReplayModel())
        elif name == "oracle":
            if any(p.oracle is None for p in profiles):
                raise UsageError("model 'oracle' needs --profile with oracle noise parameters")
            models.append(PhysicsModel())
        elif name in ("awgn", "pg"):
            models.append(BaselineNoiseModel(BaselineModel(name), fit_read_sigma(pairs, profiles), name))
        else:
            path = Path(name)
            if not path.exists():
                raise UsageError(f"unknown model {name!r} (not a built-in name or checkpoint)")
            gen, table = load_noise_model(path)
            missing = sorted(set(int(i) for i in pairs.isos) - set(table.isos()))
            if missing:
                raise DataError(f"{path} has no profile for ISO {missing}")
            models.append(LearnedModel(gen, path.stem))
    return models


def cmd_evaluate(args) -> int:
    pairs = load_pairs(args.clean, args.real)
    names = [m.strip() for m in args.models.split(",") if m.strip()]
    if not names:
        raise UsageError("--models is empty")
    clean_paths = list_clean(args.clean)
    profiles = _load_profile_file(args.profile) or _header_profiles(clean_paths)
    pairs.check_profiles(profiles)
    models = _eval_models(names, pairs, profiles)
    out = Path(args.out)
    _guard_outputs([out, out.with_suffix(".manifest.json")], args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    profs = [profiles[int(i)] for i in pairs.isos]
    rows = []
    for model in models:
        res = akld(model, pairs.clean, pairs.noisy, profs, pairs.value_range, args.samples,
                   RngStream(args.seed))
        rows += [(name, model.name, v) for name, v in zip(pairs.names, res.per_image)]
        rows.append(("mean", model.name, res.value))
        print(f"{model.name}: AKLD {res.value:.6f}")
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image_id", "model", "kld"))
        for r in rows:
            w.writerow((r[0], r[1], repr(float(r[2]))))
    inputs = list_clean(args.clean) + [Path(args.real) / f"{n}{NOISY_SUFFIX}.lrf" for n in pairs.names]
    inputs += [Path(n) for n in names if Path(n).exists()]
    write_manifest(out.with_suffix(".manifest.json"), "evaluate", args, inputs, [out], args.seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrnoise", description="Low-light raw noise synthesis toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="physics-based or baseline noise for a directory of clean LRF files")
    p.add_argument("--clean", required=True)
    p.add_argument("--profile", required=True, help="profile table: iso gain_K sigma_r [sigma_read sigma_row quant_step]")
    p.add_argument("--mode", choices=("oracle", "awgn", "pg"), default="oracle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=1.0, help="preview gain")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    for verb, fn in (("train-denoiser", cmd_train_denoiser), ("train-noise-model", cmd_train_noise_model)):
        p = sub.add_parser(verb, help=f"{verb.replace('-', ' ')} on X.lrf / X_noisy.lrf pairs",
                           epilog=TRAIN_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--pairs", required=True)
        if verb == "train-noise-model":
            p.add_argument("--denoiser", required=True, help="frozen denoiser checkpoint")
            p.add_argument("--profile", help="profile table; defaults to the LRF headers")
        p.add_argument("--config", help="key=value training config")
        p.add_argument("--out", required=True)
        p.add_argument("--val-count", type=int, default=None,
                       help="trailing pairs held out for validation (default min(16, N/8))")
        p.add_argument("--resume", action="store_true", help="continue from the checkpoint at --out")
        p.add_argument("--force", action="store_true")
        p.set_defaults(func=fn)

    p = sub.add_parser("synthesize", help="learned noise for a directory of clean LRF files")
    p.add_argument("--clean", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--iso", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=1.0, help="preview gain")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="AKLD of noise models against real pairs", epilog=EVALUATE_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--clean", required=True)
    p.add_argument("--real", required=True, help="directory holding X_noisy.lrf for every clean X.lrf")
    p.add_argument("--models", required=True, help="comma-separated model names or checkpoints")
    p.add_argument("--out", required=True)
    p.add_argument("--profile")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lrnoise: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, CheckpointError, ArchitectureError, ConfigError) as exc:
        print(f"lrnoise: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"lrnoise: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
