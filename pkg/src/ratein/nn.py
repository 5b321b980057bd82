"""Minimal dense network engine with named dropout sites.

Weights are stored as ``(in_dim, out_dim)`` matrices so a batch ``x`` of shape
``(n, in_dim)`` maps through ``x @ W + b``.  Dropout is inverted: surviving
activations are scaled by ``1 / (1 - p)`` when the mask is applied, so a rate of
zero is exactly the identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ratein.seeding import make_rng

FORMAT_NAME = "ratein-network"
FORMAT_VERSION = 1

LAYER_KINDS = ("dense", "relu", "dropout")


class ShapeError(ValueError):
    pass


class TrainingDivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    site_id: str | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.kind != "dense" and self.in_dim != self.out_dim:
            raise ValueError(f"{self.kind} layer must preserve dimension")
        if (self.kind == "dropout") != (self.site_id is not None):
            raise ValueError("site_id is required on dropout layers and only there")


def validate_arch(layers: Sequence[LayerSpec]) -> None:
    if not layers:
        raise ValueError("empty architecture")
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_dim != nxt.in_dim:
            raise ShapeError(f"layer dims incompatible: {prev} -> {nxt}")
    ids = [l.site_id for l in layers if l.kind == "dropout"]
    if len(ids) != len(set(ids)):
        raise ValueError(f"duplicate dropout site ids: {ids}")


def regression_arch(in_dim: int = 1, hidden: Sequence[int] = (50, 50), out_dim: int = 1) -> list[LayerSpec]:
    """Dense stack with a ReLU and a dropout site after every hidden layer.

    ``regression_arch()`` is the 1-50-50-1 synthetic regression net with sites
    ``h1`` and ``h2``.  Also used for classifiers by passing ``out_dim=C``.
    """
    layers: list[LayerSpec] = []
    d = in_dim
    for k, width in enumerate(hidden, start=1):
        layers.append(LayerSpec("dense", d, width))
        layers.append(LayerSpec("relu", width, width))
        layers.append(LayerSpec("dropout", width, width, site_id=f"h{k}"))
        d = width
    layers.append(LayerSpec("dense", d, out_dim))
    return layers


@dataclass(frozen=True)
class Network:
    layers: tuple[LayerSpec, ...]
    weights: tuple[tuple[np.ndarray, np.ndarray], ...]
    rng_seed: int = 0

    def __post_init__(self):
        validate_arch(self.layers)
        dense = [l for l in self.layers if l.kind == "dense"]
        if len(dense) != len(self.weights):
            raise ValueError("one (W, b) pair is required per dense layer")
        for spec, (w, b) in zip(dense, self.weights):
            if w.shape != (spec.in_dim, spec.out_dim) or b.shape != (spec.out_dim,):
                raise ShapeError(f"weight shapes {w.shape}, {b.shape} do not match {spec}")
            w.flags.writeable = False
            b.flags.writeable = False

    @property
    def site_ids(self) -> list[str]:
        return [l.site_id for l in self.layers if l.kind == "dropout"]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def site_dims(self) -> dict[str, int]:
        return {l.site_id: l.out_dim for l in self.layers if l.kind == "dropout"}

    def with_weights(self, weights) -> "Network":
        return Network(self.layers, tuple((np.array(w, dtype=float), np.array(b, dtype=float)) for w, b in weights), self.rng_seed)


def init_network(layers: Sequence[LayerSpec], seed: int = 0) -> Network:
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for W and b."""
    layers = tuple(layers)
    validate_arch(layers)
    rng = make_rng(seed, 0)
    weights = []
    for spec in layers:
        if spec.kind != "dense":
            continue
        bound = 1.0 / math.sqrt(spec.in_dim)
        w = rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim))
        b = rng.uniform(-bound, bound, size=spec.out_dim)
        weights.append((w, b))
    return Network(layers, tuple(weights), int(seed))


@dataclass
class ActivationTrace:
    site_id: str
    pre: np.ndarray
    post: np.ndarray
    mask: np.ndarray
    rate: float


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if net.in_dim > 1 or x.size == 1 else x.reshape(-1, 1)
        single = x.shape[0] == 1
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with in_dim {net.in_dim}")
    return x, single


def check_rates(net: Network, rates: Mapping[str, float] | None) -> dict[str, float]:
    if rates is None:
        return {s: 0.0 for s in net.site_ids}
    unknown = set(rates) - set(net.site_ids)
    if unknown:
        raise ValueError(f"unknown dropout sites: {sorted(unknown)}")
    out = {}
    for s in net.site_ids:
        if s not in rates:
            raise ValueError(f"no rate given for dropout site {s!r}")
        p = float(rates[s])
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate for {s!r} must be in [0, 1), got {p}")
        out[s] = p
    return out


def apply_dropout(pre: np.ndarray, rate: float, mask_seed: int, site_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverted-dropout mask for one site; returns ``(post, mask)``.

    The keep mask is ``u >= rate`` for uniforms ``u`` drawn from the stream
    keyed by ``(mask_seed, site_index)``, so for a fixed seed the set of dropped
    units only grows as the rate grows.
    """
    if rate == 0.0:
        return pre, np.ones(pre.shape, dtype=bool)
    u = make_rng(mask_seed, site_index).random(pre.shape)
    mask = u >= rate
    return pre * mask / (1.0 - rate), mask


def forward(
    net: Network,
    x,
    rates: Mapping[str, float] | None = None,
    mask_seed: int = 0,
    stop_at: str | None = None,
) -> tuple[np.ndarray | None, list[ActivationTrace]]:
    """Run ``x`` through ``net`` with the given per-site dropout rates.

    ``x`` may be a single instance or a batch ``(n, in_dim)``; a single instance
    gives 1-D outputs and traces.  With ``stop_at`` the pass ends right after
    that site and the returned output is ``None``.
    """
    h, single = _as_batch(net, x)
    rates = check_rates(net, rates)
    if stop_at is not None and stop_at not in rates:
        raise ValueError(f"unknown dropout site {stop_at!r}")
    traces: list[ActivationTrace] = []
    wi = 0
    site_index = 0
    for spec in net.layers:
        if spec.kind == "dense":
            w, b = net.weights[wi]
            h = h @ w + b
            wi += 1
        elif spec.kind == "relu":
            h = np.maximum(h, 0.0)
        else:
            p = rates[spec.site_id]
            post, mask = apply_dropout(h, p, mask_seed, site_index)
            if single:
                traces.append(ActivationTrace(spec.site_id, h[0], post[0], mask[0], p))
            else:
                traces.append(ActivationTrace(spec.site_id, h, post, mask, p))
            h = post
            site_index += 1
            if spec.site_id == stop_at:
                return None, traces
    return (h[0] if single else h), traces


def predict(net: Network, x) -> np.ndarray:
    """Deterministic no-dropout forward pass."""
    return forward(net, x)[0]


# -- training ---------------------------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(net: Network, x, y, loss: str = "mse") -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Training loss and its gradient w.r.t. every (W, b); dropout sites are inactive."""
    h, _ = _as_batch(net, x)
    n = h.shape[0]
    inputs = []
    wi = 0
    for spec in net.layers:
        inputs.append(h)
        if spec.kind == "dense":
            w, b = net.weights[wi]
            h = h @ w + b
            wi += 1
        elif spec.kind == "relu":
            h = np.maximum(h, 0.0)
    if loss == "mse":
        y = np.asarray(y, dtype=float).reshape(h.shape)
        r = h - y
        value = float(np.mean(r**2))
        d = 2.0 * r / r.size
    elif loss == "xent":
        labels = np.asarray(y, dtype=int).reshape(-1)
        prob = _softmax(h)
        value = float(-np.mean(np.log(prob[np.arange(n), labels] + 1e-300)))
        d = prob
        d[np.arange(n), labels] -= 1.0
        d /= n
    else:
        raise ValueError(f"unknown loss {loss!r}")

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    wi = len(net.weights)
    for spec, h_in in zip(reversed(net.layers), reversed(inputs)):
        if spec.kind == "dense":
            wi -= 1
            w, _ = net.weights[wi]
            grads.append((h_in.T @ d, d.sum(axis=0)))
            d = d @ w.T
        elif spec.kind == "relu":
            d = d * (h_in > 0)
    grads.reverse()
    return value, grads


@dataclass
class Adam:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit(
    x,
    y,
    arch: Sequence[LayerSpec],
    epochs: int = 1000,
    lr: float = 0.01,
    seed: int = 123,
    loss: str = "mse",
) -> tuple[Network, np.ndarray]:
    """Full-batch Adam training; returns the network and the per-epoch loss curve."""
    net = init_network(arch, seed)
    params = [np.array(a) for pair in net.weights for a in pair]
    opt = Adam(lr=lr)
    history = np.empty(epochs)
    for epoch in range(epochs):
        cur = net.with_weights(zip(params[0::2], params[1::2]))
        value, grads = loss_and_grads(cur, x, y, loss)
        if not math.isfinite(value):
            raise TrainingDivergenceError(epoch, value)
        history[epoch] = value
        opt.step(params, [g for pair in grads for g in pair])
    trained = net.with_weights(zip(params[0::2], params[1::2]))
    return trained, history


def train_regression(x, y, arch: Sequence[LayerSpec], epochs: int = 1000, lr: float = 0.01, seed: int = 123) -> Network:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty training data")
    if arch[-1].out_dim != 1:
        raise ValueError("regression architecture must end in out_dim 1")
    return fit(x, y, arch, epochs, lr, seed, "mse")[0]


def train_classifier(x, labels, arch: Sequence[LayerSpec], epochs: int = 500, lr: float = 0.01, seed: int = 123) -> Network:
    labels = np.asarray(labels)
    n_classes = arch[-1].out_dim
    if labels.size == 0:
        raise ValueError("empty training data")
    if np.any(labels < 0) or np.any(labels >= n_classes) or not np.all(labels == np.round(labels)):
        raise ValueError(f"labels must be integers in [0, {n_classes})")
    return fit(x, labels.astype(int), arch, epochs, lr, seed, "xent")[0]


# -- persistence ------------------------------------------------------------


def network_to_dict(net: Network) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "rng_seed": net.rng_seed,
        "layers": [
            {"kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim, "site_id": l.site_id} for l in net.layers
        ],
        "weights": [
            {"shape": list(w.shape), "W": w.ravel(order="C").tolist(), "b": b.tolist()} for w, b in net.weights
        ],
    }


def network_from_dict(data: dict) -> Network:
    if data.get("format") != FORMAT_NAME:
        raise ValueError("not a ratein network file")
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {data.get('version')}")
    layers = tuple(LayerSpec(**l) for l in data["layers"])
    weights = tuple(
        (np.array(e["W"], dtype=float).reshape(e["shape"]), np.array(e["b"], dtype=float)) for e in data["weights"]
    )
    return Network(layers, weights, int(data["rng_seed"]))


def save_network(net: Network, path, provenance: dict | None = None) -> None:
    data = network_to_dict(net)
    if provenance:
        data["provenance"] = provenance
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text()))
