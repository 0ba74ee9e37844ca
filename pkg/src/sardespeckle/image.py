"""Domain-tagged 2-D images."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = ["Domain", "Image", "DomainError"]


class DomainError(ValueError):
    """An image is in the wrong radiometric domain for an operation."""


class Domain(IntEnum):
    REFLECTIVITY = 0
    INTENSITY = 1
    AMPLITUDE = 2
    LOG_INTENSITY = 3


_NONNEGATIVE = (Domain.REFLECTIVITY, Domain.INTENSITY, Domain.AMPLITUDE)


@dataclass(frozen=True)
class Image:
    """A 2-D grid of real values, ``values[row, col]``, tagged with its domain."""

    values: np.ndarray
    domain: Domain

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"image values must be a non-empty 2-D array, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.floating):
            v = v.astype(np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "domain", Domain(self.domain))
        if not np.isfinite(v).all():
            raise ValueError("image contains non-finite values")
        if self.domain in _NONNEGATIVE and (v < 0).any():
            raise ValueError(f"{self.domain.name.lower()} image has negative values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def require(self, *domains: Domain) -> "Image":
        if self.domain not in domains:
            names = ", ".join(d.name.lower() for d in domains)
            raise DomainError(f"expected {names} image, got {self.domain.name.lower()}")
        return self

    def amplitude(self) -> np.ndarray:
        """Amplitude-domain values (square root of intensity)."""
        if self.domain == Domain.AMPLITUDE:
            return self.values
        if self.domain == Domain.LOG_INTENSITY:
            return np.exp(0.5 * self.values)
        return np.sqrt(self.values)

    @classmethod
    def reflectivity(cls, values) -> "Image":
        return cls(np.asarray(values, dtype=np.float64), Domain.REFLECTIVITY)

    @classmethod
    def intensity(cls, values) -> "Image":
        return cls(np.asarray(values, dtype=np.float64), Domain.INTENSITY)

    @classmethod
    def log_intensity(cls, values) -> "Image":
        return cls(np.asarray(values, dtype=np.float64), Domain.LOG_INTENSITY)
