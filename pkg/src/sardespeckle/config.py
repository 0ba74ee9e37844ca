"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every key must appear in
:data:`SCHEMA`; values are parsed by the listed type.  Lists are comma
separated, milestones are ``epoch:factor`` pairs and regions are
``x,y,w,h``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .evaluation import Region
from .nn import NetworkConfig
from .pipeline import PhaseConfig

__all__ = ["ConfigError", "RunConfig", "SCHEMA", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _milestones(s: str) -> tuple[tuple[int, float], ...]:
    out = []
    for item in _strs(s):
        e, f = item.split(":")
        out.append((int(e), float(f)))
    return tuple(out)


def _region(s: str) -> Region:
    vals = _ints(s)
    if len(vals) != 4:
        raise ValueError("region needs x,y,w,h")
    return Region(*vals)


def _optional_int(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


# key -> (parser, default, help)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "seed": (int, 0, "master seed for every random stream"),
    # network
    "depth": (int, 2, "down/up levels"),
    "channels": (_ints, (16, 32), "channels per level"),
    "kernel_size": (int, 3, "convolution size"),
    "leaky_slope": (float, 0.1, "leaky rectifier slope"),
    # phase
    "phase": (str, "A", "A, B or C"),
    "epochs": (_optional_int, None, "epochs (per refinement iteration in phase C)"),
    "batch_size": (int, 4, "patches per batch"),
    "patch_size": (int, 64, "training patch side"),
    "stride": (int, 32, "patch grid stride"),
    "looks": (float, 1.0, "number of looks L"),
    "loss": (str, "likelihood", "likelihood or l2"),
    "lr": (float, None, "base learning rate"),
    "lr_milestones": (_milestones, None, "epoch:factor learning-rate drops"),
    "change_compensation": (_bool, True, "compensate changes in phase B/C"),
    "subsample_factor": (int, 2, "phase-B pre-estimate subsampling"),
    "refinement_iterations": (int, 1, "phase-C compensation refreshes"),
    "pair_selection": (str, "random", "random or closest"),
    "pretrained": (_bool, True, "phase B starts from phase A"),
    "pairs_per_series": (_optional_int, None, "date pairs per series per epoch"),
    "keep_epoch_checkpoints": (_bool, False, "write a checkpoint every epoch"),
    # simulation
    "n_scenes": (int, 8, "training scenes"),
    "n_test": (int, 2, "held-out scenes"),
    "scene_size": (int, 256, "scene side in pixels"),
    "n_series": (int, 4, "time series to simulate"),
    "series_size": (int, 128, "time-series scene side"),
    "dates": (int, 6, "dates per time series"),
    "change_fraction": (float, 0.1, "changed pixel fraction per date"),
    "correlation_sigma": (float, 0.0, "Gaussian PSF sigma for correlated speckle (0 = none)"),
    # paths
    "data_dir": (Path, None, "directory written by simulate"),
    "init_checkpoint": (Path, None, "checkpoint of the previous phase"),
    "resume_checkpoint": (Path, None, "mid-phase checkpoint to continue"),
    "checkpoint": (Path, None, "network used for despeckle/evaluate"),
    "input": (Path, None, "image to despeckle"),
    "reference": (Path, None, "reference image for evaluate"),
    "estimate": (Path, None, "restored image for evaluate"),
    "noisy": (Path, None, "noisy image for the residual test"),
    # inference
    "tile": (int, 256, "tile side for large images"),
    "tile_ramp": (int, 16, "cosine ramp width between tiles"),
    "preview": (_bool, False, "also write 8-bit PGM previews"),
    # evaluation
    "metrics": (_strs, ("psnr",), "psnr, psnr_protocol, enl, wasserstein"),
    "region": (_region, None, "ENL rectangle x,y,w,h"),
    "protocol_instances": (int, 20, "noisy instances for psnr_protocol"),
    "peak": (float, None, "PSNR peak (default: reference maximum)"),
    "wasserstein_samples": (_optional_int, None, "quantile grid size"),
    # efficiency
    "x_true": (float, 0.0, "true log-reflectivity"),
    "sample_counts": (_ints, (1, 2, 5, 10, 20, 50, 100, 200), "sample counts N"),
    "trials": (int, 10_000, "Monte Carlo trials per N"),
}


@dataclass
class RunConfig:
    values: dict[str, Any]
    given: set[str] = field(default_factory=set)
    # relative paths as written, before resolution against the config directory
    written_paths: dict[str, str] = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def network(self) -> NetworkConfig:
        try:
            return NetworkConfig(self.depth, self.channels, self.kernel_size, self.leaky_slope)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def phase_config(self) -> PhaseConfig:
        try:
            return PhaseConfig(
                phase=self.phase,
                epochs=self.epochs,
                batch_size=self.batch_size,
                patch_size=self.patch_size,
                stride=self.stride,
                seed=self.seed,
                looks=self.looks,
                loss=self.loss,
                lr=self.lr,
                lr_milestones=self.lr_milestones,
                change_compensation=self.change_compensation,
                subsample_factor=self.subsample_factor,
                refinement_iterations=self.refinement_iterations,
                pair_selection=self.pair_selection,
                pretrained=self.pretrained,
                pairs_per_series=self.pairs_per_series,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if self.values.get(k) is None]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")

    def require_files(self, *keys: str) -> None:
        for k in keys:
            p = self.values.get(k)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{k}: file not found: {p}")

    def digest(self) -> str:
        # relative paths enter as written, so a config hashes the same wherever it runs
        canon = {
            k: (self.written_paths.get(k, str(v)) if isinstance(v, Path) else v) for k, v in sorted(self.values.items())
        }
        return hashlib.sha256(json.dumps(canon, sort_keys=True, default=str).encode()).hexdigest()


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    values = {k: spec[1] for k, spec in SCHEMA.items()}
    given = set()
    written = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in given:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            parsed = SCHEMA[key][0](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
        if isinstance(parsed, Path) and base_dir is not None and not parsed.is_absolute():
            written[key] = value
            parsed = base_dir / parsed
        values[key] = parsed
        given.add(key)
    return RunConfig(values, given, written)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)
