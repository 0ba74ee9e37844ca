"""Command-line entry point: ``sardespeckle <command> --config FILE --out DIR``.

Commands: simulate, train, despeckle, evaluate, efficiency.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import ChangeModel, TimeSeries, simulate_time_series, textured_scene
from .efficiency import run_efficiency_experiment
from .evaluation import MetricError, enl, psnr_amplitude, psnr_protocol, wasserstein_residual, write_metrics_csv
from .image import Domain, Image
from .imageio import ImageFormatError, export_pgm, read_image, write_image
from .pipeline import MissingPrerequisiteError, despeckle, despeckle_tiled, train
from .speckle import corrupt, gaussian_kernel

log = logging.getLogger("sardespeckle")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _kernel(cfg: RunConfig):
    return gaussian_kernel(cfg.correlation_sigma) if cfg.correlation_sigma > 0 else None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: RunConfig, artifacts: list[Path]) -> Path:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_hash": cfg.digest(),
        "code_version": __version__,
        "artifacts": [{"path": p.relative_to(out).as_posix(), "sha256": _sha256(p)} for p in sorted(artifacts)],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    """Clean and speckled training/test scenes plus multi-date stacks."""
    if cfg.dates < 2:
        raise ConfigError("dates must be >= 2")
    if not 0 <= cfg.change_fraction < 1:
        raise ConfigError("change_fraction must lie in [0, 1)")
    kernel = _kernel(cfg)
    change = ChangeModel(cfg.change_fraction) if cfg.change_fraction > 0 else None
    train_ss, test_ss, series_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    written: list[Path] = []

    def put(rel: str, img: Image):
        p = out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        written.append(write_image(p, img))

    for folder, ss, count in (("train", train_ss, cfg.n_scenes), ("test", test_ss, cfg.n_test)):
        for i, child in enumerate(ss.spawn(count)):
            scene_rng, noise_rng = child.spawn(2)
            clean = textured_scene(cfg.scene_size, cfg.scene_size, np.random.default_rng(scene_rng))
            put(f"{folder}/clean_{i:02d}.s2s1", clean)
            put(f"{folder}/noisy_{i:02d}.s2s1", corrupt(clean, cfg.looks, np.random.default_rng(noise_rng), kernel))
    for s, child in enumerate(series_ss.spawn(cfg.n_series)):
        scene_rng, ts_rng = child.spawn(2)
        clean = textured_scene(cfg.series_size, cfg.series_size, np.random.default_rng(scene_rng))
        ts = simulate_time_series(clean, cfg.dates, cfg.looks, change, kernel, np.random.default_rng(ts_rng))
        for d in range(ts.dates):
            put(f"series/s{s:02d}/date_{d:02d}.s2s1", ts.images[d])
            put(f"series/s{s:02d}/refl_{d:02d}.s2s1", ts.reflectivities[d])
            put(f"series/s{s:02d}/mask_{d:02d}.s2s1", Image(ts.change_masks[d].astype(np.float64), Domain.REFLECTIVITY))
    return written


def _load_series(data_dir: Path, looks: float) -> list[TimeSeries]:
    out = []
    for sdir in sorted((data_dir / "series").glob("s*")):
        dates = sorted(sdir.glob("date_*.s2s1"))
        out.append(TimeSeries([read_image(p) for p in dates], looks))
    if not out:
        raise ConfigError(f"no time series under {data_dir / 'series'}")
    return out


def _validate_train(cfg: RunConfig):
    phase_cfg = cfg.phase_config()
    net_cfg = cfg.network()
    cfg.require("data_dir")
    if not Path(cfg.data_dir).is_dir():
        raise ConfigError(f"data_dir not found: {cfg.data_dir}")
    if phase_cfg.patch_size % net_cfg.multiple:
        raise ConfigError(f"patch_size must be divisible by {net_cfg.multiple}")
    needs_parent = phase_cfg.phase == "C" or (phase_cfg.phase == "B" and phase_cfg.pretrained)
    if needs_parent and cfg.resume_checkpoint is None:
        prev = {"B": "A", "C": "B"}[phase_cfg.phase]
        if cfg.init_checkpoint is None:
            raise MissingPrerequisiteError(f"phase {phase_cfg.phase} needs a phase-{prev} checkpoint: set init_checkpoint")
        if not Path(cfg.init_checkpoint).is_file():
            raise MissingPrerequisiteError(f"phase-{prev} checkpoint not found: {cfg.init_checkpoint}")
    cfg.require_files("resume_checkpoint")
    if phase_cfg.phase == "A" and not sorted((Path(cfg.data_dir) / "train").glob("clean_*.s2s1")):
        raise ConfigError(f"no training scenes under {cfg.data_dir}/train")
    return phase_cfg, net_cfg


def cmd_train(cfg: RunConfig, out: Path) -> list[Path]:
    phase_cfg, net_cfg = _validate_train(cfg)
    data_dir = Path(cfg.data_dir)
    if phase_cfg.phase == "A":
        data = [read_image(p) for p in sorted((data_dir / "train").glob("clean_*.s2s1"))]
    else:
        data = _load_series(data_dir, phase_cfg.looks)
    network = net_cfg
    if cfg.init_checkpoint is not None:
        network = load_checkpoint(cfg.init_checkpoint).params
    resume = load_checkpoint(cfg.resume_checkpoint) if cfg.resume_checkpoint is not None else None
    out.mkdir(parents=True, exist_ok=True)
    report = train(
        phase_cfg,
        network,
        data,
        resume=resume,
        checkpoint_dir=out,
        keep_epoch_checkpoints=cfg.keep_epoch_checkpoints,
        callback=lambda e, p, rec: log.info("phase %s epoch %d loss %.6f lr %g", rec["phase"], e, rec["loss"], rec["lr"]),
    )
    written = [Path(p) for p in report.checkpoints] + [out / f"phase{phase_cfg.phase}_last.s2sw"]
    written.append(report.write_csv(out / "report.csv"))
    written.append(report.write_jsonl(out / "report.jsonl"))
    return sorted(set(written))


def cmd_despeckle(cfg: RunConfig, out: Path) -> list[Path]:
    cfg.require("checkpoint", "input")
    cfg.require_files("checkpoint", "input")
    params = load_checkpoint(cfg.checkpoint).params
    y = read_image(cfg.input)
    if y.domain != Domain.INTENSITY:
        raise ConfigError(f"input must be an intensity image, got {y.domain.name.lower()}")
    if cfg.tile % params.config.multiple:
        raise ConfigError(f"tile must be a multiple of {params.config.multiple}")
    out.mkdir(parents=True, exist_ok=True)
    if max(y.shape) > cfg.tile:
        try:
            est = despeckle_tiled(params, y, tile=cfg.tile, ramp=cfg.tile_ramp)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        est = despeckle(params, y)
    stem = Path(cfg.input).stem
    written = [
        write_image(out / f"{stem}_despeckled.s2s1", est),
        write_image(out / f"{stem}_amplitude.s2s1", Image(est.amplitude(), Domain.AMPLITUDE)),
    ]
    if cfg.preview:
        written.append(export_pgm(out / f"{stem}_despeckled_preview.pgm", est))
        written.append(export_pgm(out / f"{stem}_input_preview.pgm", y))
    return written


_METRICS = ("psnr", "psnr_protocol", "enl", "wasserstein")


def cmd_evaluate(cfg: RunConfig, out: Path) -> list[Path]:
    unknown = set(cfg.metrics) - set(_METRICS)
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")
    m = set(cfg.metrics)
    if "enl" in m and cfg.region is None:
        raise ConfigError("metric enl needs a region = x,y,w,h")
    if m & {"psnr", "psnr_protocol"}:
        cfg.require("reference")
    if m & {"psnr", "enl", "wasserstein"}:
        cfg.require("estimate")
    if "wasserstein" in m:
        cfg.require("noisy")
    if "psnr_protocol" in m:
        cfg.require("checkpoint")
        if cfg.protocol_instances < 2:
            raise ConfigError("protocol_instances must be >= 2")
    cfg.require_files("reference", "estimate", "noisy", "checkpoint")

    ref = read_image(cfg.reference) if cfg.reference else None
    est = read_image(cfg.estimate) if cfg.estimate else None
    image_id = Path(cfg.estimate or cfg.reference).stem
    rows = []
    if "psnr" in m:
        rows.append((image_id, "psnr", psnr_amplitude(ref, est, cfg.peak), None))
    if "psnr_protocol" in m:
        if ref.domain != Domain.REFLECTIVITY:
            raise ConfigError("psnr_protocol needs a reflectivity reference")
        params = load_checkpoint(cfg.checkpoint).params
        mean, sigma, _ = psnr_protocol(
            ref, lambda y: despeckle(params, y), cfg.looks, cfg.protocol_instances, cfg.seed, _kernel(cfg)
        )
        rows.append((Path(cfg.reference).stem, "psnr_protocol", mean, sigma))
    if "enl" in m:
        rows.append((image_id, "enl", enl(est, cfg.region), None))
    if "wasserstein" in m:
        y = read_image(cfg.noisy)
        rows.append((image_id, "wasserstein", wasserstein_residual(y, est, cfg.looks, cfg.wasserstein_samples), None))
    out.mkdir(parents=True, exist_ok=True)
    return [write_metrics_csv(out / "metrics.csv", rows)]


def cmd_efficiency(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.trials < 1000:
        raise ConfigError("trials must be >= 1000")
    if not cfg.sample_counts or min(cfg.sample_counts) < 1:
        raise ConfigError("sample_counts must be positive integers")
    out.mkdir(parents=True, exist_ok=True)
    curve = run_efficiency_experiment(cfg.x_true, cfg.looks, cfg.sample_counts, cfg.trials, cfg.seed)
    return [curve.to_csv(out / "efficiency.csv")]


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "despeckle": cmd_despeckle,
    "evaluate": cmd_evaluate,
    "efficiency": cmd_efficiency,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sardespeckle", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", required=True, type=Path, help="key = value configuration file")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "despeckle":
            p.add_argument("--input", type=Path, default=None, help="override the config input image")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(command: str, cfg: RunConfig, out: Path) -> Path:
    """Execute a command and write its manifest; returns the manifest path."""
    out = Path(out)
    artifacts = COMMANDS[command](cfg, out)
    return _write_manifest(out, command, cfg, artifacts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.values["seed"] = args.seed
        if getattr(args, "input", None) is not None:
            cfg.values["input"] = args.input
            cfg.written_paths.pop("input", None)
        run(args.command, cfg, args.out)
    except (ConfigError, MissingPrerequisiteError, CheckpointError, ImageFormatError, MetricError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
