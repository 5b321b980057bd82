"""Information-loss estimators.

Mutual information is the plug-in histogram estimate in nats,
``I(A;B) = H(A) + H(B) - H(A,B)``, computed on discretised samples.  Two
discretisations are supported: ``fixed-bins`` (equal-width bins on min-max
normalised values) and ``entropy-equal-bins`` (equal-mass bins, each holding as
close to ``n / bins`` samples as ties allow).

The information-loss functional compares a dropout-perturbed signal with its
clean counterpart:

* MI mode: ``delta_i = (I_full - I_drop) / I_full``, positive when dropout
  destroys information.
* SSIM mode: ``delta_i = 1 - SSIM(pre, post)`` on feature maps min-max
  normalised to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MI_MODES = ("fixed-bins", "entropy-equal-bins")
NORMALIZATIONS = ("minmax", "none")
ESTIMATORS = ("mi", "ssim")
REFERENCES = ("network-input", "layer-input")


class InsufficientSamplesError(ValueError):
    pass


class UndefinedReferenceError(ValueError):
    """Raised when the clean-network MI is zero, so relative loss is undefined."""


@dataclass(frozen=True)
class MIEstimatorConfig:
    mode: str = "fixed-bins"
    bins: int = 30
    normalization: str = "minmax"

    def __post_init__(self):
        if self.mode not in MI_MODES:
            raise ValueError(f"mode must be one of {MI_MODES}")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class InfoLossSpec:
    estimator: str = "mi"
    reference: str = "network-input"
    epsilon: float = 0.1
    delta: float = 0.01
    mi: MIEstimatorConfig = field(default_factory=MIEstimatorConfig)
    ssim_window: int = 11

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must be in [0, 1)")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.epsilon + self.delta >= 1.0:
            raise ValueError("epsilon + delta must be < 1")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")

    @property
    def needs_batch(self) -> bool:
        return self.estimator == "mi" and self.reference == "network-input"


@dataclass(frozen=True)
class LossMeasurement:
    i_full: float
    i_drop: float
    delta_i: float


# -- discretisation -----------------------------------------------------------


def entropy_equal_bins(samples, max_bins: int) -> np.ndarray:
    """Equal-mass bin edges for ``samples``.

    Cut ``k`` falls between sorted positions ``floor(k*n/max_bins) - 1`` and
    ``floor(k*n/max_bins)``, so distinct-valued samples get bins of
    ``floor(n/bins)`` or ``ceil(n/bins)``.  A cut landing inside a run of tied
    values moves to the nearest end of that run (the left one on a tie) and
    coinciding cuts merge, so a tied run never straddles two bins and a
    discrete variable keeps one bin per level when ``max_bins`` allows.
    Returned edges include the sample minimum and maximum; ``len(edges) - 1``
    is the bin count.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    n = s.size
    if max_bins < 1:
        raise ValueError("max_bins must be >= 1")
    if n < max_bins:
        raise InsufficientSamplesError(f"need at least {max_bins} samples, got {n}")
    # positions j where s[j-1] < s[j]: the only places a cut can separate values
    runs = np.flatnonzero(s[1:] > s[:-1]) + 1
    if runs.size == 0:
        return np.array([s[0], s[-1]])
    cuts = (np.arange(1, max_bins) * n) // max_bins
    right = np.minimum(np.searchsorted(runs, cuts), runs.size - 1)
    left = np.maximum(right - 1, 0)
    snapped = np.where(np.abs(cuts - runs[left]) <= np.abs(runs[right] - cuts), runs[left], runs[right])
    pos = np.unique(snapped)
    inner = 0.5 * (s[pos - 1] + s[pos])
    return np.concatenate(([s[0]], inner, [s[-1]]))


def _minmax(v: np.ndarray) -> np.ndarray:
    lo = v.min(axis=0)
    span = v.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (v - lo) / safe, 0.0)


def digitize(v, cfg: MIEstimatorConfig) -> tuple[np.ndarray, int]:
    """Integer bin codes for each column of ``v`` and the code alphabet size."""
    v = np.asarray(v, dtype=float)
    if cfg.mode == "fixed-bins":
        z = _minmax(v) if cfg.normalization == "minmax" else np.clip(v, 0.0, 1.0)
        return np.minimum((z * cfg.bins).astype(np.int64), cfg.bins - 1), cfg.bins
    if v.ndim == 1:
        edges = entropy_equal_bins(v, cfg.bins)
        return np.searchsorted(edges[1:-1], v, side="right").astype(np.int64), cfg.bins
    codes = np.empty(v.shape, dtype=np.int64)
    for j in range(v.shape[1]):
        edges = entropy_equal_bins(v[:, j], cfg.bins)
        codes[:, j] = np.searchsorted(edges[1:-1], v[:, j], side="right")
    return codes, cfg.bins


def _entropy_rows(counts: np.ndarray, n: int) -> np.ndarray:
    """Plug-in entropy (nats) of each row of a count matrix, order-independent."""
    c = np.sort(counts, axis=-1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        clogc = np.where(c > 0, c * np.log(np.where(c > 0, c, 1.0)), 0.0)
    return math.log(n) - clogc.sum(axis=-1) / n


def _mi_codes(ca: np.ndarray, ka: int, cb: np.ndarray, kb: int) -> np.ndarray:
    """MI between code vector ``ca`` (n,) and every column of ``cb`` (n, m)."""
    n, m = cb.shape
    units = np.arange(m)
    ha = _entropy_rows(np.bincount(ca, minlength=ka), n)
    hb = _entropy_rows(np.bincount((cb + units * kb).ravel(), minlength=m * kb).reshape(m, kb), n)
    joint = (ca[:, None] * kb + cb) + units * (ka * kb)
    hab = _entropy_rows(np.bincount(joint.ravel(), minlength=m * ka * kb).reshape(m, ka * kb), n)
    return (ha + hb) - hab


def mi_pairwise_histogram(a, b, cfg: MIEstimatorConfig = MIEstimatorConfig()) -> float:
    """Histogram MI (nats) between two equal-length sample vectors, clamped at 0."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("a and b must have the same length")
    if a.size < 4:
        raise InsufficientSamplesError("need at least 4 samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    ca, ka = digitize(a, cfg)
    cb, kb = digitize(b, cfg)
    return max(float(_mi_codes(ca, ka, cb[:, None], kb)[0]), 0.0)


def entropy_histogram(a, cfg: MIEstimatorConfig = MIEstimatorConfig()) -> float:
    codes, k = digitize(np.asarray(a, dtype=float).ravel(), cfg)
    return float(_entropy_rows(np.bincount(codes, minlength=k), codes.size))


def mi_per_unit(inputs, activations, cfg: MIEstimatorConfig = MIEstimatorConfig()) -> np.ndarray:
    """MI between every input column and every activation column, shape (d_in, units)."""
    x = np.asarray(inputs, dtype=float)
    h = np.asarray(activations, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if h.ndim == 1:
        h = h[:, None]
    if x.shape[0] != h.shape[0]:
        raise ValueError("batch size must match activation count")
    if x.shape[0] < 4:
        raise InsufficientSamplesError(f"batch MI needs at least 4 instances, got {x.shape[0]}")
    ch, kh = digitize(h, cfg)
    cx, kx = digitize(x, cfg)
    out = np.stack([_mi_codes(cx[:, i], kx, ch, kh) for i in range(x.shape[1])])
    return np.maximum(out, 0.0)


def mi_input_to_layer(inputs, activations, cfg: MIEstimatorConfig = MIEstimatorConfig()) -> float:
    """Batch-level MI between the network input and each hidden unit, averaged over units."""
    return float(mi_per_unit(inputs, activations, cfg).mean())


# -- SSIM -----------------------------------------------------------------------


def gaussian_kernel(window: int, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(window) - (window - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    y = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(y, g.size, axis=1) @ g


def ssim_map(a, b, window: int = 11, data_range: float = 1.0, sigma: float = 1.5) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D maps")
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if min(a.shape) < window:
        raise ValueError(f"maps {a.shape} smaller than window {window}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = gaussian_kernel(window, sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a * mu_a
    s_bb = _filter_valid(b * b, g) - mu_b * mu_b
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return num / den


def ssim(a, b, window: int = 11, data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Mean SSIM over all valid window positions (Gaussian weights, no padding)."""
    return float(ssim_map(a, b, window, data_range, sigma).mean())


def most_square_shape(length: int) -> tuple[int, int]:
    r = int(math.isqrt(length))
    while length % r:
        r -= 1
    return r, length // r


def _normalize_map(m: np.ndarray) -> np.ndarray:
    lo, hi = m.min(), m.max()
    return (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)


def ssim_vectors(pre, post, window: int = 11) -> float:
    """SSIM between dense activation vectors, averaged over batch rows.

    Each row is laid out on its most-square ``r x c`` grid and normalised to
    [0, 1]; the window shrinks to the largest odd size that fits the grid.
    """
    pre = np.atleast_2d(np.asarray(pre, dtype=float))
    post = np.atleast_2d(np.asarray(post, dtype=float))
    if pre.shape != post.shape:
        raise ValueError(f"shape mismatch {pre.shape} vs {post.shape}")
    shape = pre.shape[1:] if pre.ndim > 2 else most_square_shape(pre.shape[1])
    win = min(window, min(shape))
    if win % 2 == 0:
        win -= 1
    vals = [
        ssim(_normalize_map(p.reshape(shape)), _normalize_map(q.reshape(shape)), win, 1.0)
        for p, q in zip(pre, post)
    ]
    return float(np.mean(vals))


# -- loss functional ----------------------------------------------------------------


def _mi_layer_rows(ref: np.ndarray, sig: np.ndarray, cfg: MIEstimatorConfig) -> float:
    ref = np.atleast_2d(ref)
    sig = np.atleast_2d(sig)
    return float(np.mean([mi_pairwise_histogram(r, s, cfg) for r, s in zip(ref, sig)]))


def measure_loss(
    spec: InfoLossSpec,
    reference,
    pre,
    post,
    i_full: float | None = None,
) -> LossMeasurement:
    """Information loss caused by turning ``pre`` into ``post``.

    ``reference`` is the network input batch for the ``network-input``
    reference (MI against each unit over the batch) and is ignored otherwise:
    the ``layer-input`` reference compares ``post`` with ``pre`` within each
    instance, units acting as samples.  ``i_full`` overrides the clean MI, e.g.
    when it comes from a pass with every upstream site disabled.
    """
    pre = np.asarray(pre, dtype=float)
    post = np.asarray(post, dtype=float)
    if pre.shape != post.shape:
        raise ValueError(f"pre/post shape mismatch {pre.shape} vs {post.shape}")
    if spec.estimator == "ssim":
        s = ssim_vectors(pre, post, spec.ssim_window)
        return LossMeasurement(1.0, s, 1.0 - s)
    if spec.reference == "network-input":
        if reference is None:
            raise ValueError("network-input reference requires the input batch")
        full = mi_input_to_layer(reference, pre, spec.mi) if i_full is None else i_full
        drop = mi_input_to_layer(reference, post, spec.mi)
    else:
        full = _mi_layer_rows(pre, pre, spec.mi) if i_full is None else i_full
        drop = _mi_layer_rows(pre, post, spec.mi)
    if full <= 0:
        raise UndefinedReferenceError("clean mutual information is zero")
    return LossMeasurement(full, drop, (full - drop) / full)


def clean_information(spec: InfoLossSpec, reference, pre) -> float:
    """``I_full`` for a clean (dropout-free) activation."""
    if spec.estimator == "ssim":
        return 1.0
    pre = np.asarray(pre, dtype=float)
    if spec.reference == "network-input":
        return mi_input_to_layer(reference, pre, spec.mi)
    return _mi_layer_rows(pre, pre, spec.mi)
