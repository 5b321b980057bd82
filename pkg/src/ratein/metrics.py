"""Evaluation metrics: MSE, ACC, DSC, ECE, AUARC, BUC and PICP / interval width / IER."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


class UndefinedMetricError(ValueError):
    pass


def _pair(a, b, name_a="y_true", name_b="y_pred"):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"{name_a} and {name_b} differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def mse(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean((a.astype(float) - b.astype(float)) ** 2))


def acc(labels_true, labels_pred) -> float:
    a, b = _pair(labels_true, labels_pred)
    return float(np.mean(a == b))


def dsc(mask_pred, mask_true) -> float:
    """Dice coefficient ``2|P & G| / (|P| + |G|)``; two empty masks score 1."""
    p, g = _pair(np.asarray(mask_pred, dtype=bool), np.asarray(mask_true, dtype=bool), "mask_pred", "mask_true")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def calibration_bins(uncertainty, error, n_bins: int = 15):
    """Per-bin (count, mean uncertainty, mean error) on uniform bins over [0, 1]."""
    u, e = _pair(np.asarray(uncertainty, dtype=float).ravel(), np.asarray(error, dtype=float).ravel(), "uncertainty", "error")
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("uncertainty scores must lie in [0, 1]")
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    u_sum = np.bincount(idx, weights=u, minlength=n_bins)
    e_sum = np.bincount(idx, weights=e, minlength=n_bins)
    nz = np.maximum(counts, 1)
    return counts, u_sum / nz, e_sum / nz


def ece(uncertainty, error, n_bins: int = 15) -> float:
    """Binned L1 gap between mean uncertainty and mean error; empty bins add nothing."""
    counts, u_mean, e_mean = calibration_bins(uncertainty, error, n_bins)
    return float(np.sum(counts / counts.sum() * np.abs(u_mean - e_mean)))


def accuracy_rejection_curve(correct, uncertainty) -> tuple[np.ndarray, np.ndarray]:
    """Rejection fractions and retained accuracy, most-uncertain rejected first.

    The grid has one point per retained count ``k = N..1`` at ``r = 1 - k/N``
    plus ``r = 1``, which repeats the single-most-certain accuracy.  Instances
    with tied uncertainty are treated as exchangeable: a tie group split by the
    cut contributes its mean correctness per retained slot.
    """
    c, u = _pair(np.asarray(correct, dtype=float).ravel(), np.asarray(uncertainty, dtype=float).ravel(), "correct", "uncertainty")
    n = c.size
    if n < 2:
        raise ValueError("need at least 2 instances")
    vals, inverse, counts = np.unique(u, return_inverse=True, return_counts=True)
    correct_sum = np.bincount(inverse, weights=c, minlength=vals.size)
    cum_n = np.cumsum(counts)
    cum_c = np.cumsum(correct_sum)
    k = np.arange(1, n + 1)
    g = np.searchsorted(cum_n, k, side="left")
    before_n = cum_n[g] - counts[g]
    before_c = cum_c[g] - correct_sum[g]
    acc_k = (before_c + (k - before_n) * correct_sum[g] / counts[g]) / k
    r = np.concatenate(((n - k[::-1]) / n, [1.0]))
    a = np.concatenate((acc_k[::-1], [acc_k[0]]))
    return r, a


def auarc(correct, uncertainty) -> float:
    r, a = accuracy_rejection_curve(correct, uncertainty)
    return float(np.trapezoid(a, r))


def boundary_band(mask, band_width: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Boundary band and interior of a binary mask.

    The edge is ``mask & ~erode(mask)`` (3x3 element, outside the grid counts
    as background); the band is every pixel within Chebyshev distance
    ``band_width // 2`` of an edge pixel, so ``band_width = 5`` gives a 5-pixel
    band centred on the edge.  Interior is the foreground outside the band.
    """
    m = np.asarray(mask, dtype=bool)
    square = np.ones((3, 3), dtype=bool)
    edge = m & ~ndimage.binary_erosion(m, structure=square, border_value=0)
    r = band_width // 2
    band = ndimage.binary_dilation(edge, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool)) if r > 0 else edge
    return band, m & ~band


def buc(uncertainty_map, mask_true, band_width: int = 5) -> float:
    """Share of mean uncertainty on the boundary band vs the interior."""
    u, m = _pair(np.asarray(uncertainty_map, dtype=float), np.asarray(mask_true, dtype=bool), "uncertainty_map", "mask_true")
    band, interior = boundary_band(m, band_width)
    if not band.any() or not interior.any():
        raise UndefinedMetricError("mask has an empty boundary band or interior")
    mb = float(u[band].mean())
    mi = float(u[interior].mean())
    if mb + mi == 0:
        raise UndefinedMetricError("uncertainty is zero on both regions")
    return mb / (mb + mi)


def picp_and_width(y_true, mean, std=None, z: float = 1.96) -> tuple[float, float, float]:
    """Coverage of ``[mu - z*sigma, mu + z*sigma]``, mean width ``2*z*sigma`` and their ratio.

    ``mean`` may be an ``McSummary``, in which case ``std`` is taken from it.
    The ratio (IER) is ``inf`` when nothing is covered.
    """
    if std is None:
        mean, std = mean.mean, mean.std
    y, mu = _pair(np.asarray(y_true, dtype=float).ravel(), np.asarray(mean, dtype=float).ravel(), "y_true", "mean")
    _, sd = _pair(mu, np.asarray(std, dtype=float).ravel(), "mean", "std")
    if z <= 0:
        raise ValueError("z must be > 0")
    half = z * sd
    covered = (y >= mu - half) & (y <= mu + half)
    picp = float(np.mean(covered))
    width = float(np.mean(2.0 * z * sd))
    ier = width / picp if picp > 0 else float("inf")
    return picp, width, ier
