"""Three-phase training, change compensation and inference.

Phase A trains on pairs of simulated speckle realisations of clean scenes.
Phase B fine-tunes on ordered pairs of dates from multi-date stacks, with the
target date compensated for scene changes using pre-estimates from the
phase-A network.  Phase C repeats B with compensation images recomputed by
the network being refined.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .checkpoint import Checkpoint, params_digest, save_checkpoint
from .data import PatchPairStream, TimeSeries, _batches, _extract, _log, make_synthetic_dataset, patch_grid
from .image import Domain, Image
from .losses import LOSSES
from .nn import AdamState, NetworkConfig, NetworkParams, adam_step, backward, forward, init_params, receptive_radius
from .speckle import check_looks

__all__ = [
    "PhaseConfig",
    "TrainReport",
    "MissingPrerequisiteError",
    "NumericalFailure",
    "compensate_change",
    "infer_log",
    "pre_estimate",
    "despeckle",
    "despeckle_tiled",
    "train",
]

PHASE_DEFAULTS = {
    # epochs, base learning rate, (epoch, factor) milestones
    "A": (10, 1e-3, ((5, 0.1), (10, 0.01))),
    "B": (20, 1e-5, ()),
    "C": (10, 1e-5, ()),
}


class MissingPrerequisiteError(RuntimeError):
    """A phase was started without the checkpoint of the phase before it."""


class NumericalFailure(FloatingPointError):
    """Training or inference produced non-finite values."""


@dataclass
class PhaseConfig:
    """Settings for one training phase.

    ``epochs`` counts epochs for phases A and B; phase C runs
    ``refinement_iterations * epochs`` epochs and refreshes the compensation
    images every ``epochs`` epochs.  ``lr`` and ``lr_milestones`` default per
    phase (``PHASE_DEFAULTS``).
    """

    phase: str = "A"
    epochs: int | None = None
    batch_size: int = 4
    patch_size: int = 64
    stride: int = 32
    seed: int = 0
    looks: float = 1.0
    loss: str = "likelihood"
    lr: float | None = None
    lr_milestones: tuple[tuple[int, float], ...] | None = None
    change_compensation: bool = True
    subsample_factor: int = 2
    refinement_iterations: int = 1
    pair_selection: str = "random"
    pretrained: bool = True
    pairs_per_series: int | None = None

    def __post_init__(self):
        self.phase = str(self.phase).upper()
        if self.phase not in PHASE_DEFAULTS:
            raise ValueError(f"unknown phase {self.phase!r}")
        epochs, lr, milestones = PHASE_DEFAULTS[self.phase]
        if self.epochs is None:
            self.epochs = epochs
        if self.lr is None:
            self.lr = lr
        if self.lr_milestones is None:
            self.lr_milestones = milestones
        self.lr_milestones = tuple((int(e), float(f)) for e, f in self.lr_milestones)
        self.looks = check_looks(self.looks)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.subsample_factor < 1 or self.refinement_iterations < 1:
            raise ValueError("subsample_factor and refinement_iterations must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {sorted(LOSSES)}")
        if self.pair_selection not in ("random", "closest"):
            raise ValueError(f"unknown pair selection {self.pair_selection!r}")

    @property
    def total_epochs(self) -> int:
        return self.epochs * (self.refinement_iterations if self.phase == "C" else 1)

    def flags(self) -> list[str]:
        out = []
        if self.phase in ("B", "C"):
            if not self.change_compensation:
                out.append("no-compensation")
            if self.pair_selection == "closest":
                out.append("closest-date")
            if not self.pretrained:
                out.append("no-pretrain")
        if self.loss != "likelihood":
            out.append(f"loss-{self.loss}")
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = [list(m) for m in self.lr_milestones]
        return d


@dataclass
class TrainReport:
    phase: str
    flags: list[str]
    epoch_losses: list[float] = field(default_factory=list)
    epoch_lrs: list[float] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)
    params: NetworkParams | None = None

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("epoch,loss,lr\n")
            for rec in self.records:
                fh.write(f"{rec['epoch']},{rec['loss']!r},{rec['lr']!r}\n")
        return path


# ---------------------------------------------------------------------------
# compensation and inference


def _values(img, domain=Domain.LOG_INTENSITY) -> np.ndarray:
    if isinstance(img, Image):
        return img.require(domain).values
    return np.asarray(img, dtype=np.float64)


def compensate_change(y2, xhat1, xhat2):
    """Move the second date towards the first: ``y2 - xhat2 + xhat1``."""
    a, b, c = _values(y2), _values(xhat1), _values(xhat2)
    if not (a.shape == b.shape == c.shape):
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, {c.shape}")
    # difference first, so equal estimates return y2 bit for bit
    out = a + (b - c)
    return Image(out, Domain.LOG_INTENSITY) if isinstance(y2, Image) else out


def _pad_to_multiple(values: np.ndarray, m: int, least: int = 0) -> np.ndarray:
    h, w = values.shape
    ph, pw = max((-h) % m, least - h), max((-w) % m, least - w)
    ph, pw = ph + (-(h + ph)) % m, pw + (-(w + pw)) % m
    if not (ph or pw):
        return values
    mode = "reflect" if min(h, w) > max(ph, pw) else "symmetric"
    return np.pad(values, ((0, ph), (0, pw)), mode=mode)


def _restore(params: NetworkParams, log_values: np.ndarray) -> np.ndarray:
    # subtract the predicted noise from the float64 input, not its cast copy,
    # so a zero network returns its input exactly
    x = log_values[None, None].astype(params.dtype)
    out, _ = forward(params, x)
    return log_values.astype(np.float64) - (x - out)[0, 0].astype(np.float64)


def infer_log(params: NetworkParams, log_values: np.ndarray) -> np.ndarray:
    """Run the network on one log-intensity image of any size."""
    log_values = np.asarray(log_values)
    h, w = log_values.shape
    cfg = params.config
    # the bottleneck must stay wider than the convolution's reflection padding
    padded = _pad_to_multiple(log_values, cfg.multiple, cfg.multiple * (cfg.kernel_size // 2 + 1))
    out = _restore(params, padded)[:h, :w]
    if not np.isfinite(out).all():
        raise NumericalFailure("network produced non-finite values")
    return out


def _upsample_bilinear(values: np.ndarray, factor: int, shape) -> np.ndarray:
    if factor == 1:
        return values
    rows = np.arange(shape[0]) / factor
    cols = np.arange(shape[1]) / factor
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(values, [rr, cc], order=1, mode="nearest")


def pre_estimate(params: NetworkParams, y: Image, subsample_factor: int = 2) -> Image:
    """Log-reflectivity estimate computed on a subsampled copy of ``y``.

    Keeping every k-th pixel weakens spatial speckle correlation at the price
    of resolution; the estimate is brought back to full size bilinearly.
    """
    y.require(Domain.INTENSITY)
    k = int(subsample_factor)
    if k < 1:
        raise ValueError("subsample factor must be >= 1")
    if k > min(y.shape):
        raise ValueError(f"subsample factor {k} larger than image {y.shape}")
    small = _log(y.values[::k, ::k])
    est = infer_log(params, small)
    return Image(_upsample_bilinear(est, k, y.shape), Domain.LOG_INTENSITY)


def despeckle(params: NetworkParams, y: Image) -> Image:
    """Reflectivity estimate ``exp(net(log y))``; see ``Image.amplitude``."""
    y.require(Domain.INTENSITY)
    with np.errstate(over="ignore"):
        out = np.exp(infer_log(params, _log(y.values)))
    if not np.isfinite(out).all():
        raise NumericalFailure("restored image is not finite")
    return Image(out, Domain.REFLECTIVITY)


def _tile_starts(n: int, tile: int, step: int) -> list[int]:
    if n <= tile:
        return [0]
    starts = list(range(0, n - tile, step))
    starts.append(n - tile)
    return starts


def _tile_weight(start: int, tile: int, n: int, margin: int, ramp: int) -> np.ndarray:
    # zero over the outer margin, raised cosine over the ramp; image borders keep full weight
    t = np.arange(tile) + 0.5

    def edge(d):
        return 0.5 - 0.5 * np.cos(np.pi * np.clip((d - margin) / ramp, 0.0, 1.0))

    w = np.ones(tile)
    if start > 0:
        w *= edge(t)
    if start + tile < n:
        w *= edge(tile - t)
    return w


def despeckle_tiled(params: NetworkParams, y: Image, tile: int = 256, ramp: int = 16, margin: int | None = None) -> Image:
    """Restore a large image tile by tile with cosine-ramp blending.

    Tile origins sit on the pooling grid and each tile's outer ``margin``
    pixels (at least the receptive radius) get zero weight, so the result
    matches whole-image inference up to rounding.
    """
    y.require(Domain.INTENSITY)
    m = params.config.multiple
    if margin is None:
        margin = receptive_radius(params.config)
    if tile % m:
        raise ValueError(f"tile size {tile} must be a multiple of {m}")
    step = (tile - 2 * margin - ramp) // m * m
    if step < m:
        raise ValueError(f"tile {tile} too small for margin {margin} and ramp {ramp}")
    h, w = y.shape
    logy = _pad_to_multiple(_log(y.values), m)
    hp, wp = logy.shape
    acc = np.zeros((hp, wp))
    norm = np.zeros((hp, wp))
    th, tw = min(tile, hp), min(tile, wp)
    for r in _tile_starts(hp, th, step):
        wr = _tile_weight(r, th, hp, margin, ramp)
        for c in _tile_starts(wp, tw, step):
            wc = _tile_weight(c, tw, wp, margin, ramp)
            out = _restore(params, logy[r : r + th, c : c + tw])
            weight = np.outer(wr, wc)
            acc[r : r + th, c : c + tw] += weight * out
            norm[r : r + th, c : c + tw] += weight
    with np.errstate(over="ignore"):
        est = np.exp(acc[:h, :w] / norm[:h, :w])
    if not np.isfinite(est).all():
        raise NumericalFailure("restored image is not finite")
    return Image(est, Domain.REFLECTIVITY)


# ---------------------------------------------------------------------------
# training


class _SeriesPairs:
    """Epoch-wise (y_i, compensated y_j) patch pairs drawn from time series."""

    def __init__(self, series: Sequence[TimeSeries], config: PhaseConfig):
        self.series = list(series)
        self.config = config
        self.logs = [[_log(img.values) for img in ts.images] for ts in self.series]
        self.corners = [patch_grid(*ts.shape, config.patch_size, config.stride) for ts in self.series]
        self.estimates: list[list[np.ndarray]] | None = None

    def refresh(self, estimator: NetworkParams, subsample_factor: int):
        self.estimates = [
            [pre_estimate(estimator, img, subsample_factor).values for img in ts.images] for ts in self.series
        ]

    def _pairs(self, n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
        k = self.config.pairs_per_series or n
        if self.config.pair_selection == "closest":
            out = []
            for i in rng.integers(0, n, size=k):
                j = i + 1 if i == 0 else i - 1 if i == n - 1 else i + rng.choice([-1, 1])
                out.append((int(i), int(j)))
            return out
        ordered = [(i, j) for i in range(n) for j in range(n) if i != j]
        picks = rng.permutation(len(ordered))[: min(k, len(ordered))]
        return [ordered[p] for p in picks]

    def batches(self, epoch: int):
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, epoch])
        ins, tgts = [], []
        for s, ts in enumerate(self.series):
            for i, j in self._pairs(ts.dates, rng):
                target = self.logs[s][j]
                if cfg.change_compensation:
                    target = compensate_change(target, self.estimates[s][i], self.estimates[s][j])
                ins.append(_extract(self.logs[s][i], self.corners[s], cfg.patch_size))
                tgts.append(_extract(target, self.corners[s], cfg.patch_size))
        inputs = np.concatenate(ins)[:, None]
        targets = np.concatenate(tgts)[:, None]
        order = np.random.default_rng([cfg.seed, epoch, 1]).permutation(len(inputs))
        return _batches(inputs, targets, cfg.batch_size, order)


def _check_prerequisite(config: PhaseConfig, network) -> None:
    need = {"B": "A", "C": "B"}.get(config.phase)
    if need is None or (config.phase == "B" and not config.pretrained):
        return
    meta = network.metadata if isinstance(network, NetworkParams) else {}
    if meta.get("phase") != need or not meta.get("complete"):
        have = meta.get("phase", "none")
        raise MissingPrerequisiteError(
            f"phase {config.phase} needs a completed phase-{need} checkpoint (got phase {have})"
        )


def _stamp(params: NetworkParams, config: PhaseConfig, chain: list[dict], epoch: int, complete: bool):
    params.metadata = {
        "phase": config.phase,
        "complete": complete,
        "epoch": epoch,
        "flags": config.flags(),
        "chain": list(chain),
    }
    if complete:
        pid = params_digest(params)
        params.metadata["id"] = pid
        params.metadata["chain"] = list(chain) + [{"phase": config.phase, "id": pid, "flags": config.flags()}]


def train(
    config: PhaseConfig,
    network: NetworkParams | NetworkConfig | None,
    data,
    *,
    resume: Checkpoint | None = None,
    checkpoint_dir=None,
    keep_epoch_checkpoints: bool = False,
    callback: Callable[[int, NetworkParams, dict], None] | None = None,
) -> TrainReport:
    """Run one training phase.

    ``network`` is the starting point: a network config (or None) for a fresh
    phase-A run, or the completed checkpoint of the previous phase.  ``data``
    is a list of clean reflectivity images (or a ready PatchPairStream) for
    phase A and a list of :class:`TimeSeries` for phases B and C.  ``resume``
    continues an interrupted run of the same phase from its last saved epoch.
    """
    loss_fn = LOSSES[config.loss]
    start_epoch = 1
    if resume is not None:
        params = resume.params
        adam = resume.adam
        estimator = resume.estimator
        chain = resume.extra.get("parent_chain", [])
        if resume.extra.get("phase") != config.phase or adam is None:
            raise ValueError("resume checkpoint does not belong to this phase")
        start_epoch = int(resume.extra["epoch"]) + 1
    else:
        if config.phase == "A" or (config.phase == "B" and not config.pretrained):
            net_cfg = network.config if isinstance(network, NetworkParams) else network or NetworkConfig()
            params = init_params(net_cfg, np.random.default_rng([config.seed, 0xA11]))
            chain = []
        else:
            _check_prerequisite(config, network)
            params = network.copy()
            chain = list(network.metadata.get("chain", []))
        estimator = params.copy() if config.phase in ("B", "C") else None
        adam = AdamState(lr=config.lr, milestones=config.lr_milestones)
    if config.patch_size % params.config.multiple:
        raise ValueError(f"patch size {config.patch_size} not divisible by {params.config.multiple}")
    if config.phase in ("B", "C") and not config.pretrained and config.change_compensation:
        raise ValueError("change compensation needs a pretrained estimator; disable one of them")

    if config.phase == "A":
        source = data if isinstance(data, PatchPairStream) else make_synthetic_dataset(data, config.looks, config, config.seed)
    else:
        source = _SeriesPairs(data, config)
        if config.change_compensation:
            factor = config.subsample_factor if config.phase == "B" else 1
            source.refresh(estimator, factor)

    report = TrainReport(config.phase, config.flags(), provenance=chain)
    out_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    total = config.total_epochs
    for epoch in range(start_epoch, total + 1):
        event = {}
        if config.phase == "C" and epoch > 1 and (epoch - 1) % config.epochs == 0:
            estimator = params.copy()
            if config.change_compensation:
                source.refresh(estimator, 1)
            event["compensation_refreshed"] = True
            event["refinement_iteration"] = (epoch - 1) // config.epochs + 1
        losses = []
        for inp, tgt in source.batches(epoch):
            out, cache = forward(params, inp.astype(params.dtype))
            lv, grad = loss_fn(out, tgt, config.looks)
            n = out.size
            mean_loss = lv.total / n
            if not math.isfinite(mean_loss):
                raise NumericalFailure(f"non-finite loss at epoch {epoch}")
            grads = backward(params, cache, (grad / n).astype(params.dtype))
            adam_step(adam, params, grads, epoch)
            losses.append(mean_loss)
        lr = adam.lr_at(epoch)
        rec = {"phase": config.phase, "epoch": epoch, "loss": float(np.mean(losses)), "lr": lr, "steps": adam.step}
        rec.update(event)
        report.records.append(rec)
        report.epoch_losses.append(rec["loss"])
        report.epoch_lrs.append(lr)

        complete = epoch == total
        _stamp(params, config, chain, epoch, complete)
        if out_dir is not None:
            extra = {"phase": config.phase, "epoch": epoch, "parent_chain": chain, "config": config.to_dict()}
            ckpt = Checkpoint(params, adam, estimator, extra)
            names = [f"phase{config.phase}_last.s2sw"]
            if keep_epoch_checkpoints:
                names.append(f"phase{config.phase}_epoch{epoch:03d}.s2sw")
            if complete:
                names.append(f"phase{config.phase}.s2sw")
            for name in names:
                save_checkpoint(out_dir / name, ckpt)
                if name != f"phase{config.phase}_last.s2sw":
                    report.checkpoints.append(str(out_dir / name))
        if callback is not None:
            callback(epoch, params, rec)

    report.provenance = list(params.metadata.get("chain", chain))
    report.params = params
    return report
