"""Estimation error of the l2 and likelihood M-estimators of a constant.

Each trial draws ``N`` log-intensities ``x_true + log S`` and estimates
``x_true`` with the closed-form minimiser of either summed loss.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .speckle import check_looks, log_speckle_bias, make_rng, sample_speckle

__all__ = [
    "EfficiencyCurve",
    "l2_minimizer",
    "likelihood_minimizer",
    "run_efficiency_experiment",
    "DEFAULT_SAMPLE_COUNTS",
]

DEFAULT_SAMPLE_COUNTS = (1, 2, 5, 10, 20, 50, 100, 200)


def l2_minimizer(y, looks, axis=-1):
    """argmin_x sum_k (x - y_k + psi(L) - log L)^2."""
    return np.mean(y, axis=axis) - log_speckle_bias(looks)


def likelihood_minimizer(y, axis=-1):
    """argmin_x sum_k x - y_k + exp(y_k - x), i.e. log of the mean intensity."""
    y = np.asarray(y, dtype=np.float64)
    m = np.max(y, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.mean(np.exp(y - m), axis=axis))


@dataclass
class EfficiencyCurve:
    sample_counts: list[int]
    rmse_l2: list[float]
    rmse_lik: list[float]
    stderr_l2: list[float]
    stderr_lik: list[float]
    trials: int
    looks: float
    seed: object = None
    intensity_means: list[float] = field(default_factory=list)

    def rows(self):
        for row in zip(self.sample_counts, self.rmse_l2, self.rmse_lik, self.stderr_l2, self.stderr_lik):
            yield row

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "rmse_l2", "rmse_lik", "stderr_l2", "stderr_lik"])
            for n, a, b, sa, sb in self.rows():
                w.writerow([n, repr(a), repr(b), repr(sa), repr(sb)])
        return path


def _rmse(err):
    sq = err * err
    mse = sq.mean()
    rmse = float(np.sqrt(mse))
    # delta method: se(sqrt(m)) = se(m) / (2 sqrt(m))
    se_mse = sq.std(ddof=1) / np.sqrt(sq.size)
    return rmse, float(se_mse / (2 * rmse)) if rmse > 0 else 0.0


def run_efficiency_experiment(
    x_true: float = 0.0,
    looks=1.0,
    sample_counts=DEFAULT_SAMPLE_COUNTS,
    trials: int = 10_000,
    rng=0,
) -> EfficiencyCurve:
    """RMSE in log-intensity of both estimators for each sample count.

    Every sample count gets its own child stream spawned from ``rng``, so a
    curve does not depend on evaluation order.
    """
    looks = check_looks(looks)
    counts = [int(n) for n in sample_counts]
    if not counts:
        raise ValueError("sample_counts must be non-empty")
    if any(n < 1 for n in counts):
        raise ValueError("sample counts must be positive")
    if trials < 1000:
        raise ValueError(f"need at least 1000 trials, got {trials}")
    seed = rng if not isinstance(rng, np.random.Generator) else None
    children = make_rng(rng).spawn(len(counts))
    curve = EfficiencyCurve(counts, [], [], [], [], int(trials), looks, seed)
    for n, child in zip(counts, children):
        s = sample_speckle(n, trials, looks, child).values
        y = x_true + np.log(s)
        err_l2 = l2_minimizer(y, looks) - x_true
        est_lik = likelihood_minimizer(y)
        err_lik = est_lik - x_true
        r, se = _rmse(err_l2)
        curve.rmse_l2.append(r)
        curve.stderr_l2.append(se)
        r, se = _rmse(err_lik)
        curve.rmse_lik.append(r)
        curve.stderr_lik.append(se)
        curve.intensity_means.append(float(np.mean(np.exp(est_lik))))
    return curve
