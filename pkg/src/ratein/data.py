"""Synthetic datasets: 1-D sine regression, Gaussian blobs, and shape masks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ratein.seeding import DEFAULT_SEED, derive_seed, make_rng

X_RANGE = (-3.0, 3.0)


@dataclass(frozen=True)
class RegressionDataset:
    x: np.ndarray
    y: np.ndarray
    sigma: float
    seed: int

    def __len__(self) -> int:
        return len(self.x)


def gen_regression(n: int, sigma: float, seed: int = DEFAULT_SEED) -> RegressionDataset:
    """``y = sin(x) + N(0, sigma^2)`` with ``x ~ U[-3, 3]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = make_rng(seed, 1)
    x = rng.uniform(*X_RANGE, size=n)
    noise = rng.standard_normal(n)
    y = np.sin(x) + sigma * noise if sigma > 0 else np.sin(x)
    return RegressionDataset(x, y, float(sigma), int(seed))


def regression_splits(n_train: int, n_test: int, sigma: float, seed: int = DEFAULT_SEED):
    """Train/test pair drawn from independent streams derived from ``seed``."""
    train = gen_regression(n_train, sigma, _split_seed(seed, 0))
    test = gen_regression(n_test, sigma, _split_seed(seed, 1))
    return train, test


def _split_seed(seed: int, k: int) -> int:
    return derive_seed(seed, 100 + k)


@dataclass(frozen=True)
class ClassificationDataset:
    x: np.ndarray
    labels: np.ndarray
    centers: np.ndarray
    seed: int


def gen_blobs(n: int, classes: int = 2, separation: float = 4.0, seed: int = DEFAULT_SEED, dim: int = 2) -> ClassificationDataset:
    """Isotropic unit-variance Gaussian clusters.

    Centres sit on a regular simplex-like layout: for two classes they are at
    ``+-separation/2`` along the first axis, otherwise on a circle whose chord
    between neighbours is ``separation``.  Labels are balanced within one.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    rng = make_rng(seed, 2)
    centers = np.zeros((classes, dim))
    if classes == 2:
        centers[0, 0] = -separation / 2
        centers[1, 0] = separation / 2
    else:
        radius = separation / (2 * np.sin(np.pi / classes))
        ang = 2 * np.pi * np.arange(classes) / classes
        centers[:, 0] = radius * np.cos(ang)
        centers[:, 1] = radius * np.sin(ang)
    labels = np.arange(n) % classes
    labels = rng.permutation(labels)
    x = centers[labels] + rng.standard_normal((n, dim))
    return ClassificationDataset(x, labels, centers, int(seed))


@dataclass(frozen=True)
class ShapeSample:
    image: np.ndarray
    mask: np.ndarray
    kind: str


def disk_mask(size: int, center: tuple[float, float], radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2


def gen_shapes(grid_size: int, seed: int = DEFAULT_SEED, count: int = 1, noise: float = 0.1, kind: str | None = None) -> list[ShapeSample]:
    """Random disks or rectangles on a dark background, plus Gaussian noise."""
    if grid_size < 16:
        raise ValueError("grid_size must be >= 16")
    rng = make_rng(seed, 3)
    out = []
    for _ in range(count):
        k = kind or ("disk" if rng.random() < 0.5 else "rect")
        if k == "disk":
            r = rng.uniform(grid_size / 6, grid_size / 3)
            c = rng.uniform(r + 1, grid_size - r - 1, size=2)
            mask = disk_mask(grid_size, (c[0], c[1]), r)
        elif k == "rect":
            h, w = rng.integers(grid_size // 4, grid_size // 2 + 1, size=2)
            r0 = rng.integers(1, grid_size - h)
            c0 = rng.integers(1, grid_size - w)
            mask = np.zeros((grid_size, grid_size), dtype=bool)
            mask[r0 : r0 + h, c0 : c0 + w] = True
        else:
            raise ValueError(f"unknown shape kind {kind!r}")
        intensity = rng.uniform(0.6, 1.0)
        image = intensity * mask.astype(float)
        if noise > 0:
            image = image + noise * rng.standard_normal(image.shape)
        out.append(ShapeSample(image, mask, k))
    return out


# -- CSV exchange -------------------------------------------------------------


def save_regression_csv(ds: RegressionDataset, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for xi, yi in zip(ds.x, ds.y):
            w.writerow([repr(float(xi)), repr(float(yi))])


def load_regression_csv(path, sigma: float = float("nan"), seed: int = -1) -> RegressionDataset:
    rows = read_csv_rows(path)
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    return RegressionDataset(x, y, sigma, seed)


def save_grid_csv(grid: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(grid):
            w.writerow([repr(float(v)) for v in row])


def load_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def read_csv_rows(path) -> list[dict[str, str]]:
    """Read a CSV with a header row, skipping leading ``#`` comment lines."""
    with open(Path(path), newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
