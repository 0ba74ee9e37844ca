"""Fully developed speckle: sampling, corruption and log-domain statistics.

Random streams come from :func:`numpy.random.default_rng`, i.e. PCG64 seeded
through ``SeedSequence``; an integer seed always yields the same field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import Domain, Image
from .specfun import digamma, trigamma

__all__ = [
    "SpeckleField",
    "check_looks",
    "make_rng",
    "sample_speckle",
    "corrupt",
    "log_transform",
    "fisher_tippett_logpdf",
    "log_speckle_bias",
    "log_speckle_var",
    "gaussian_kernel",
    "DEFAULT_FLOOR",
]

DEFAULT_FLOOR = 1e-10


def check_looks(looks) -> float:
    looks = float(looks)
    if not math.isfinite(looks) or looks < 1.0:
        raise ValueError(f"number of looks must be finite and >= 1, got {looks}")
    return looks


def make_rng(seed) -> np.random.Generator:
    """Accept a Generator, an integer seed or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SpeckleField:
    values: np.ndarray
    looks: float
    kernel: np.ndarray | None = None


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Separable Gaussian point-spread kernel, handy for correlated speckle."""
    if radius is None:
        radius = max(1, int(math.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return np.outer(g, g)


def _gamma_unit_mean(shape, looks: float, rng: np.random.Generator) -> np.ndarray:
    if looks == int(looks):
        # sum of L exponentials; 1 - U avoids log(0)
        acc = np.zeros(shape)
        for _ in range(int(looks)):
            acc -= np.log1p(-rng.random(shape))
        return acc / looks
    return rng.standard_gamma(looks, size=shape) / looks


def _correlated(shape, looks: float, kernel: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if looks != int(looks):
        raise ValueError("correlated speckle needs an integer number of looks")
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ValueError("correlation kernel must be 2-D")
    if kernel.shape[0] > shape[0] or kernel.shape[1] > shape[1]:
        raise ValueError(f"kernel {kernel.shape} larger than image {shape}")
    energy = np.sum(kernel**2)
    if not np.isfinite(energy) or energy <= 0:
        raise ValueError("kernel must have finite, nonzero energy")
    kernel = kernel / math.sqrt(energy)
    acc = np.zeros(shape)
    for _ in range(int(looks)):
        # circular complex Gaussian with E|z|^2 = 1
        z = rng.standard_normal((2,) + tuple(shape)) * math.sqrt(0.5)
        re = ndimage.convolve(z[0], kernel, mode="wrap")
        im = ndimage.convolve(z[1], kernel, mode="wrap")
        acc += re * re + im * im
    return acc / looks


def sample_speckle(width: int, height: int, looks, rng, kernel=None) -> SpeckleField:
    """Draw a unit-mean speckle field of ``looks`` looks.

    Without ``kernel`` pixels are i.i.d. Gamma(L, 1/L).  With a kernel the
    speckle is formed from complex Gaussian fields convolved (circularly) by
    the kernel, squared in modulus and averaged over the looks.
    """
    looks = check_looks(looks)
    if int(width) < 1 or int(height) < 1:
        raise ValueError("width and height must be >= 1")
    rng = make_rng(rng)
    shape = (int(height), int(width))
    if kernel is None:
        values = _gamma_unit_mean(shape, looks, rng)
    else:
        values = _correlated(shape, looks, kernel, rng)
    # a zero draw has probability ~1e-16 per pixel; keep the field strictly positive
    values = np.maximum(values, np.finfo(np.float64).tiny)
    return SpeckleField(values, looks, None if kernel is None else np.asarray(kernel))


def corrupt(x: Image, looks, rng, kernel=None) -> Image:
    """Multiply a reflectivity image by a fresh speckle field."""
    x.require(Domain.REFLECTIVITY)
    field = sample_speckle(x.width, x.height, looks, rng, kernel)
    return Image(x.values * field.values, Domain.INTENSITY)


def log_transform(y: Image, floor: float = DEFAULT_FLOOR) -> Image:
    """Natural log of an intensity image, clamped below at ``floor``."""
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    y.require(Domain.INTENSITY, Domain.REFLECTIVITY)
    return Image(np.log(np.maximum(np.asarray(y.values, dtype=np.float64), floor)), Domain.LOG_INTENSITY)


def fisher_tippett_logpdf(s, looks):
    """Log-density of log-speckle: L log L - log Gamma(L) + L s - L exp(s)."""
    looks = check_looks(looks)
    s = np.asarray(s, dtype=np.float64)
    if not np.isfinite(s).all():
        raise ValueError("log-speckle values must be finite")
    out = looks * math.log(looks) - math.lgamma(looks) + looks * s - looks * np.exp(s)
    return out if out.ndim else float(out)


def log_speckle_bias(looks) -> float:
    """Mean of log-speckle, psi(L) - log L."""
    looks = check_looks(looks)
    return digamma(looks) - math.log(looks)


def log_speckle_var(looks) -> float:
    """Variance of log-speckle, the trigamma function at L."""
    return trigamma(check_looks(looks))
