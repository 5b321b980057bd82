"""Monte Carlo dropout: T stochastic passes, predictive mean/std and intervals."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ratein.nn import Network, _as_batch, _softmax, forward
from ratein.policies import DropoutPolicy
from ratein.seeding import derive_seed

Z95 = 1.96


@dataclass(frozen=True)
class McSummary:
    """Per-instance predictive statistics; arrays are ``(n, out_dim)``.

    ``std`` is the population (divide-by-T) standard deviation of the passes.
    """

    mean: np.ndarray
    std: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    z: float
    passes: np.ndarray | None = None

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def _pass_outputs(net: Network, x: np.ndarray, policy: DropoutPolicy, T: int, seed: int) -> np.ndarray:
    """Stack of pass outputs, shape ``(T, n, out_dim)``."""
    sites = net.site_ids
    n = x.shape[0]
    out = np.empty((T, n, net.out_dim))
    if policy.per_instance:
        if len(policy.instance_rates) != n:
            raise ValueError(f"policy has {len(policy.instance_rates)} rate sets for {n} instances")
        for i in range(n):
            for t in range(1, T + 1):
                rates = policy.rates_at(sites, t, i)
                out[t - 1, i] = forward(net, x[i : i + 1], rates, derive_seed(seed, t, i))[0]
        return out
    for t in range(1, T + 1):
        out[t - 1] = forward(net, x, policy.rates_at(sites, t), derive_seed(seed, t))[0]
    return out


def summarize(passes: np.ndarray, z: float = Z95, keep_passes: bool = False) -> McSummary:
    # deviations from the first pass keep identical passes at exactly zero spread
    dev = passes - passes[0]
    mean = passes[0] + dev.mean(axis=0)
    std = dev.std(axis=0)
    return McSummary(mean, std, mean - z * std, mean + z * std, float(z), passes if keep_passes else None)


def mc_run(
    net: Network,
    x,
    policy: DropoutPolicy,
    T: int = 30,
    z: float = Z95,
    seed: int = 0,
    keep_passes: bool = False,
) -> McSummary:
    if T < 2:
        raise ValueError("T must be >= 2 for a standard deviation")
    if z <= 0:
        raise ValueError("z must be > 0")
    policy.check_sites(net.site_ids)
    xb, _ = _as_batch(net, x)
    return summarize(_pass_outputs(net, xb, policy, T, seed), z, keep_passes)


def mc_classify(net: Network, x, policy: DropoutPolicy, T: int = 30, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Pass-averaged softmax probabilities and ``1 - max_c p_c`` uncertainty."""
    if T < 1:
        raise ValueError("T must be >= 1")
    policy.check_sites(net.site_ids)
    xb, _ = _as_batch(net, x)
    logits = _pass_outputs(net, xb, policy, T, seed)
    probs = np.mean([_softmax(l) for l in logits], axis=0)
    return probs, 1.0 - probs.max(axis=1)


SUMMARY_COLUMNS = ("instance_id", "output", "mean", "std", "lower", "upper")


def summary_to_csv(summary: McSummary, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    n, k = summary.mean.shape
    for i in range(n):
        for j in range(k):
            w.writerow(
                [i, j]
                + [repr(float(a[i, j])) for a in (summary.mean, summary.std, summary.lower, summary.upper)]
            )
    return buf.getvalue()


def summary_from_csv(text: str, z: float = Z95) -> McSummary:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    n = max(int(r["instance_id"]) for r in rows) + 1
    k = max(int(r["output"]) for r in rows) + 1
    arrs = {c: np.zeros((n, k)) for c in ("mean", "std", "lower", "upper")}
    for r in rows:
        for c in arrs:
            arrs[c][int(r["instance_id"]), int(r["output"])] = float(r[c])
    return McSummary(arrs["mean"], arrs["std"], arrs["lower"], arrs["upper"], z)
