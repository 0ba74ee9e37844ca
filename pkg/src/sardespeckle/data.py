"""Synthetic scenes, patch-pair streams and multi-date stacks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .image import Domain, Image
from .speckle import DEFAULT_FLOOR, check_looks, corrupt, make_rng

__all__ = [
    "textured_scene",
    "patch_grid",
    "PatchPairStream",
    "make_synthetic_dataset",
    "ChangeModel",
    "TimeSeries",
    "simulate_time_series",
]


def textured_scene(height: int, width: int, rng, n_regions: int | None = None) -> Image:
    """Piecewise-constant reflectivity with smooth texture, lines and bright spots.

    The log-reflectivity spans roughly [-2.5, 2.5].
    """
    rng = make_rng(rng)
    if n_regions is None:
        n_regions = int(rng.integers(6, 16))
    rows, cols = np.mgrid[0:height, 0:width]
    seeds = rng.uniform([0, 0], [height, width], size=(n_regions, 2))
    d2 = (rows[None] - seeds[:, 0, None, None]) ** 2 + (cols[None] - seeds[:, 1, None, None]) ** 2
    labels = d2.argmin(axis=0)
    log_x = rng.uniform(-1.5, 1.5, size=n_regions)[labels]

    texture = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=rng.uniform(2.0, 6.0), mode="wrap")
    texture /= texture.std() + 1e-12
    log_x = log_x + rng.uniform(0.05, 0.35) * texture

    for _ in range(int(rng.integers(1, 4))):
        # thin linear feature
        r0, c0 = rng.uniform([0, 0], [height, width])
        angle = rng.uniform(0, np.pi)
        dist = np.abs((rows - r0) * np.cos(angle) - (cols - c0) * np.sin(angle))
        log_x = np.where(dist < rng.uniform(0.7, 2.0), log_x + rng.choice([-1.2, 1.2]), log_x)
    for _ in range(int(rng.integers(2, 7))):
        r0, c0 = rng.uniform([0, 0], [height, width])
        rad = rng.uniform(1.0, 3.0)
        log_x = np.where((rows - r0) ** 2 + (cols - c0) ** 2 < rad * rad, 2.5, log_x)
    return Image(np.exp(np.clip(log_x, -2.5, 2.5)), Domain.REFLECTIVITY)


def patch_grid(height: int, width: int, patch: int, stride: int) -> list[tuple[int, int]]:
    """Top-left corners of all patches on a regular grid."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if height < patch or width < patch:
        raise ValueError(f"image {height}x{width} smaller than patch {patch}")
    return [(r, c) for r in range(0, height - patch + 1, stride) for c in range(0, width - patch + 1, stride)]


def _log(values: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(np.asarray(values, dtype=np.float64), DEFAULT_FLOOR))


def _batches(inputs: np.ndarray, targets: np.ndarray, batch_size: int, order: np.ndarray):
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield inputs[idx], targets[idx]


def _extract(values: np.ndarray, corners, patch: int) -> np.ndarray:
    return np.stack([values[r : r + patch, c : c + patch] for r, c in corners])


@dataclass
class PatchPairStream:
    """Pairs of independently speckled log-intensity patches of the same scene.

    Speckle is redrawn each epoch from a stream derived from ``(seed, epoch)``,
    so any epoch can be regenerated on its own.
    """

    clean: Sequence[Image]
    looks: float
    patch_size: int = 64
    stride: int = 32
    batch_size: int = 4
    seed: int = 0
    kernel: np.ndarray | None = None

    def __post_init__(self):
        self.looks = check_looks(self.looks)
        self.corners = []
        for img in self.clean:
            img.require(Domain.REFLECTIVITY)
            self.corners.append(patch_grid(img.height, img.width, self.patch_size, self.stride))

    @property
    def n_patches(self) -> int:
        return sum(len(c) for c in self.corners)

    def pairs(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        """All (input, target) patches for an epoch, shape ``(n, 1, P, P)``."""
        rng = np.random.default_rng([self.seed, epoch])
        ins, tgts = [], []
        for img, corners in zip(self.clean, self.corners):
            y1 = corrupt(img, self.looks, rng, self.kernel).values
            y2 = corrupt(img, self.looks, rng, self.kernel).values
            ins.append(_extract(_log(y1), corners, self.patch_size))
            tgts.append(_extract(_log(y2), corners, self.patch_size))
        return np.concatenate(ins)[:, None], np.concatenate(tgts)[:, None]

    def batches(self, epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        inputs, targets = self.pairs(epoch)
        order = np.random.default_rng([self.seed, epoch, 1]).permutation(len(inputs))
        return _batches(inputs, targets, self.batch_size, order)


def make_synthetic_dataset(clean: Sequence[Image], looks, config=None, rng=0, kernel=None) -> PatchPairStream:
    """Build the simulated-speckle pair stream used for pre-training.

    ``config`` supplies ``patch_size``, ``stride`` and ``batch_size`` (a
    :class:`~sardespeckle.pipeline.PhaseConfig` or anything with those
    attributes); ``rng`` must be an integer seed.
    """
    kw = {}
    if config is not None:
        kw = dict(patch_size=config.patch_size, stride=config.stride, batch_size=config.batch_size)
    if isinstance(rng, np.random.Generator):
        raise TypeError("pass an integer seed so that epochs can be regenerated")
    return PatchPairStream(list(clean), looks, seed=int(rng), kernel=kernel, **kw)


@dataclass(frozen=True)
class ChangeModel:
    """Region-wise multiplicative reflectivity changes.

    Each date gets rectangles and discs until about ``fraction`` of the pixels
    are changed; each region multiplies reflectivity by ``exp(+-u)`` with
    ``u`` uniform in ``log_factor_range``.
    """

    fraction: float = 0.1
    log_factor_range: tuple[float, float] = (1.0, 2.5)
    max_size: float = 0.2

    def draw(self, shape, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        h, w = shape
        mask = np.zeros(shape, dtype=bool)
        log_factor = np.zeros(shape)
        rows, cols = np.mgrid[0:h, 0:w]
        target = self.fraction * mask.size
        top = max(3, int(self.max_size * min(h, w)))
        for _ in range(10_000):
            covered = mask.sum()
            if covered >= target:
                break
            if rng.random() < 0.5:
                rh, rw = rng.integers(2, top + 1, size=2)
                r0 = rng.integers(0, max(1, h - rh + 1))
                c0 = rng.integers(0, max(1, w - rw + 1))
                shape_mask = (rows >= r0) & (rows < r0 + rh) & (cols >= c0) & (cols < c0 + rw)
            else:
                rad = rng.uniform(1.5, top / 2)
                r0, c0 = rng.uniform([0, 0], [h, w])
                shape_mask = (rows - r0) ** 2 + (cols - c0) ** 2 < rad * rad
            new = shape_mask & ~mask
            gain = new.sum()
            # keep a region only if it brings coverage closer to the target
            if abs(covered + gain - target) > abs(covered - target):
                continue
            u = rng.uniform(*self.log_factor_range) * rng.choice([-1.0, 1.0])
            log_factor[new] = u
            mask |= new
        return mask, log_factor


@dataclass
class TimeSeries:
    """Co-registered intensity images of one scene at several dates.

    ``reflectivities`` and ``change_masks`` are simulator ground truth; the
    training code only reads ``images``.
    """

    images: list[Image]
    looks: float
    reflectivities: list[Image] = field(default_factory=list)
    change_masks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) < 2:
            raise ValueError("a time series needs at least two dates")
        shapes = {img.shape for img in self.images}
        if len(shapes) != 1:
            raise ValueError(f"dates have different shapes: {sorted(shapes)}")
        for img in self.images:
            img.require(Domain.INTENSITY)

    @property
    def dates(self) -> int:
        return len(self.images)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images[0].shape


def simulate_time_series(
    clean: Image,
    dates: int,
    looks,
    change_model: ChangeModel | str | None = None,
    kernel=None,
    rng=0,
) -> TimeSeries:
    """Speckled acquisitions of ``clean`` with date-specific region changes.

    ``change_model`` may be ``"none"`` (or None) for a static scene.
    """
    clean.require(Domain.REFLECTIVITY)
    if dates < 2:
        raise ValueError("need at least two dates")
    looks = check_looks(looks)
    if isinstance(change_model, str):
        if change_model != "none":
            raise ValueError(f"unknown change model {change_model!r}")
        change_model = None
    rng = make_rng(rng)
    images, refls, masks = [], [], []
    for child in rng.spawn(dates):
        change_rng, speckle_rng = child.spawn(2)
        if change_model is None:
            mask = np.zeros(clean.shape, dtype=bool)
            refl = clean
        else:
            mask, log_factor = change_model.draw(clean.shape, change_rng)
            refl = Image(clean.values * np.exp(log_factor), Domain.REFLECTIVITY)
        refls.append(refl)
        masks.append(mask)
        images.append(corrupt(refl, looks, speckle_rng, kernel))
    return TimeSeries(images, looks, refls, masks)
