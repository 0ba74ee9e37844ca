"""Restoration metrics: amplitude PSNR, ENL and residual-speckle W1 distance."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .image import Domain, Image
from .specfun import gamma_quantile
from .speckle import check_looks, corrupt, make_rng

__all__ = [
    "Region",
    "EvalReport",
    "MetricError",
    "psnr_amplitude",
    "psnr_protocol",
    "enl",
    "wasserstein_to_gamma",
    "wasserstein_to_fisher_tippett",
    "wasserstein_residual",
    "write_metrics_csv",
]


class MetricError(ValueError):
    """A metric is undefined for the given data."""


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle: column ``x``, row ``y``, width ``w``, height ``h``."""

    x: int
    y: int
    w: int
    h: int

    def check(self, shape, min_area: int = 100) -> "Region":
        rows, cols = shape
        if self.w < 1 or self.h < 1 or self.x < 0 or self.y < 0:
            raise MetricError(f"invalid region {self}")
        if self.x + self.w > cols or self.y + self.h > rows:
            raise MetricError(f"region {self} exceeds image of shape {shape}")
        if self.w * self.h < min_area:
            raise MetricError(f"region area {self.w * self.h} < {min_area} pixels")
        return self

    def crop(self, values: np.ndarray) -> np.ndarray:
        return values[self.y : self.y + self.h, self.x : self.x + self.w]


@dataclass
class EvalReport:
    psnr_mean: float = math.nan
    psnr_sigma: float = math.nan
    enl: float = math.nan
    wasserstein: float = math.nan
    instances: int = 0


def _amplitude(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.amplitude()
    return np.asarray(img, dtype=np.float64)


def psnr_amplitude(ref, est, peak: float | None = None) -> float:
    """10 log10(peak^2 / MSE) on amplitudes.

    Images are converted to amplitude according to their domain; bare arrays
    are taken as amplitudes.  ``peak`` defaults to the reference maximum.
    Identical inputs give ``math.inf``.
    """
    a = _amplitude(ref)
    b = _amplitude(est)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak is None:
        peak = float(a.max())
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_protocol(
    clean: Image,
    restore: Callable[[Image], Image],
    looks=1.0,
    instances: int = 20,
    rng=0,
    kernel=None,
) -> tuple[float, float, list[float]]:
    """Mean and 1-sigma PSNR over independently speckled copies of ``clean``.

    ``restore`` maps a noisy intensity image to an estimate; pass ``lambda y: y``
    to score the noisy input itself.
    """
    clean.require(Domain.REFLECTIVITY)
    rng = make_rng(rng)
    peak = float(clean.amplitude().max())
    scores = []
    for child in rng.spawn(instances):
        noisy = corrupt(clean, looks, child, kernel)
        scores.append(psnr_amplitude(clean, restore(noisy), peak))
    arr = np.asarray(scores)
    sigma = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sigma, scores


def enl(img, region: Region) -> float:
    """Equivalent number of looks, mean^2 / variance over a region."""
    values = img.values if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    region.check(values.shape)
    patch = region.crop(values).astype(np.float64)
    var = float(patch.var(ddof=1))
    if var == 0.0:
        raise MetricError("ENL undefined: zero variance in region")
    return float(patch.mean()) ** 2 / var


def wasserstein_to_gamma(samples, looks, grid: int | None = None) -> float:
    """W1 distance between an empirical sample and the unit-mean gamma law.

    Sorted samples (or empirical quantiles on a ``grid``-point mid-point
    probability grid) are compared with the theoretical quantiles at the
    same probabilities; the distance is the mean absolute gap.
    """
    looks = check_looks(looks)
    r = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if r.size == 0:
        raise MetricError("no samples")
    n = r.size if grid is None else int(grid)
    p = (np.arange(n) + 0.5) / n
    emp = r if n == r.size else np.quantile(r, p)
    return float(np.mean(np.abs(emp - gamma_quantile(p, looks))))


def wasserstein_to_fisher_tippett(samples, looks, grid: int | None = None) -> float:
    """W1 distance between log-domain samples and the log-speckle law.

    Log is monotone, so the theoretical quantiles are logs of gamma quantiles.
    """
    looks = check_looks(looks)
    r = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if r.size == 0:
        raise MetricError("no samples")
    n = r.size if grid is None else int(grid)
    p = (np.arange(n) + 0.5) / n
    emp = r if n == r.size else np.quantile(r, p)
    return float(np.mean(np.abs(emp - np.log(gamma_quantile(p, looks)))))


def wasserstein_residual(y, xhat, looks, samples: int | None = None, max_excluded: float = 0.01) -> float:
    """W1 distance of the intensity residual ``y / xhat`` to the speckle law.

    Pixels where ``xhat`` is not positive are dropped; more than
    ``max_excluded`` of them is an error.
    """
    yv = y.values if isinstance(y, Image) else np.asarray(y, dtype=np.float64)
    xv = xhat.values if isinstance(xhat, Image) else np.asarray(xhat, dtype=np.float64)
    if yv.shape != xv.shape:
        raise ValueError(f"shape mismatch: {yv.shape} vs {xv.shape}")
    ok = xv > 0
    excluded = int(ok.size - ok.sum())
    if excluded:
        if excluded > max_excluded * ok.size:
            raise MetricError(f"{excluded} of {ok.size} pixels have nonpositive estimates")
        warnings.warn(f"excluded {excluded} pixels with nonpositive estimates", RuntimeWarning, stacklevel=2)
    return wasserstein_to_gamma(yv[ok] / xv[ok], looks, samples)


def write_metrics_csv(path, rows: Iterable[tuple]) -> Path:
    """Rows of ``(image_id, metric, value, sigma)``; sigma may be blank."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "metric", "value", "sigma"])
        for image_id, metric, value, sigma in rows:
            w.writerow([image_id, metric, repr(float(value)), "" if sigma is None else repr(float(sigma))])
    return path
