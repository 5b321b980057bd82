"""Rate-In: per-site dropout-rate adaptation by information-loss feedback.

Sites are processed in forward order.  While site ``l`` is tuned, earlier
sites run at their finalised rates and later sites are disabled.  Each
iteration draws fresh masks, measures the information loss ``dI`` at site
``l`` and applies

    p <- clip(p - lr * (dI - eps), p_min, p_max)

until ``|dI - eps| < delta`` or the iteration budget is spent.  The rate
reported for a site is always the rate at which its final ``dI`` was measured.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ratein.info import InfoLossSpec, UndefinedReferenceError, clean_information, measure_loss
from ratein.nn import Network, forward
from ratein.seeding import derive_seed

log = logging.getLogger(__name__)

FAILURE_REASONS = ("hit-n-max", "floor-reached", "undefined-reference")

REPORT_COLUMNS = (
    "instance_id",
    "site_id",
    "final_rate",
    "final_delta_i",
    "iterations",
    "converged",
    "failure_reason",
    "epsilon",
    "delta",
    "measure_seeds",
)


@dataclass(frozen=True)
class RateInConfig:
    spec: InfoLossSpec = field(default_factory=InfoLossSpec)
    p_init: float | Mapping[str, float] = 0.1
    n_max: int = 30
    lr: float = 0.9
    mask_samples: int = 1
    p_min: float = 0.0
    p_max: float = 0.95
    epsilon_per_site: Mapping[str, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.mask_samples < 1:
            raise ValueError("mask_samples must be >= 1")
        if not 0.0 <= self.p_min <= self.p_max < 1.0:
            raise ValueError("need 0 <= p_min <= p_max < 1")
        inits = self.p_init.values() if isinstance(self.p_init, Mapping) else [self.p_init]
        for p in inits:
            if not self.p_min <= p <= self.p_max:
                raise ValueError(f"p_init {p} outside [{self.p_min}, {self.p_max}]")

    def initial_rate(self, site: str) -> float:
        if isinstance(self.p_init, Mapping):
            return float(self.p_init[site])
        return float(self.p_init)

    def epsilon(self, site: str) -> float:
        if self.epsilon_per_site and site in self.epsilon_per_site:
            return float(self.epsilon_per_site[site])
        return self.spec.epsilon


@dataclass(frozen=True)
class SiteResult:
    site_id: str
    final_rate: float
    final_delta_i: float
    iterations_used: int
    converged: bool
    failure_reason: str | None
    epsilon: float
    delta: float
    measure_seeds: tuple[int, ...] = ()
    history: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class RateInReport:
    sites: tuple[SiteResult, ...]
    instance_id: int = 0

    @property
    def rates(self) -> dict[str, float]:
        return {s.site_id: s.final_rate for s in self.sites}

    def site(self, site_id: str) -> SiteResult:
        for s in self.sites:
            if s.site_id == site_id:
                return s
        raise KeyError(site_id)

    @property
    def all_converged(self) -> bool:
        return all(s.converged for s in self.sites)


def _measure(net, x, spec, rates, site, seeds, i_full) -> float:
    """Mean loss at ``site`` over one mask per seed."""
    vals = []
    for s in seeds:
        _, traces = forward(net, x, rates, mask_seed=s, stop_at=site)
        tr = traces[-1]
        vals.append(measure_loss(spec, x, tr.pre, tr.post, i_full=i_full).delta_i)
    return float(np.mean(vals))


def adapt_rates(net: Network, x, cfg: RateInConfig = RateInConfig(), instance_id: int = 0) -> RateInReport:
    """Tune every dropout site of ``net`` for input ``x``.

    ``x`` is one instance or a batch.  With the MI ``network-input`` reference
    the estimate is batch-level (at least 4 rows); the ``layer-input`` MI and
    SSIM estimators work on single instances.
    """
    sites = net.site_ids
    if not sites:
        raise ValueError("network has no dropout sites")
    spec = cfg.spec
    x = np.asarray(x, dtype=float)
    if spec.needs_batch and (x.ndim < 2 and net.in_dim > 1 or x.size // net.in_dim < 4):
        raise ValueError("network-input MI needs a batch of at least 4 instances")

    _, clean = forward(net, x)
    rates = {s: 0.0 for s in sites}
    results = []
    for idx, site in enumerate(sites):
        eps = cfg.epsilon(site)
        try:
            i_full = clean_information(spec, x, clean[idx].pre)
            if i_full <= 0:
                raise UndefinedReferenceError(site)
        except UndefinedReferenceError:
            log.warning("site %s: clean information is zero, rate forced to 0", site)
            rates[site] = 0.0
            results.append(SiteResult(site, 0.0, float("nan"), 0, False, "undefined-reference", eps, spec.delta))
            continue

        p = cfg.initial_rate(site)
        history = []
        converged, reason = False, None
        for n in range(1, cfg.n_max + 1):
            seeds = tuple(derive_seed(cfg.seed, instance_id, idx, n, k) for k in range(cfg.mask_samples))
            rates[site] = p
            d = _measure(net, x, spec, rates, site, seeds, i_full)
            history.append((p, d))
            if abs(d - eps) < spec.delta:
                converged = True
                break
            if d > eps and p <= cfg.p_min:
                reason = "floor-reached"
                break
            if n == cfg.n_max:
                reason = "hit-n-max"
                break
            p = min(max(p - cfg.lr * (d - eps), cfg.p_min), cfg.p_max)
        rates[site] = p
        results.append(SiteResult(site, p, d, n, converged, reason, eps, spec.delta, seeds, tuple(history)))
    return RateInReport(tuple(results), instance_id)


def remeasure(net: Network, x, report: RateInReport, spec: InfoLossSpec) -> dict[str, float]:
    """Re-evaluate each site's loss with the reported rates and mask seeds."""
    x = np.asarray(x, dtype=float)
    _, clean = forward(net, x)
    sites = net.site_ids
    rates = {s: 0.0 for s in sites}
    out = {}
    for idx, res in enumerate(report.sites):
        rates[res.site_id] = res.final_rate
        if res.failure_reason == "undefined-reference":
            continue
        i_full = clean_information(spec, x, clean[idx].pre)
        out[res.site_id] = _measure(net, x, spec, rates, res.site_id, res.measure_seeds, i_full)
    return out


@dataclass(frozen=True)
class RateDistribution:
    site_id: str
    mean: float
    std: float
    count: int
    failures: int


def adapt_rates_batch(
    net: Network,
    inputs: Sequence,
    cfg: RateInConfig = RateInConfig(),
    population_mode: bool = False,
    workers: int = 1,
) -> tuple[list[RateInReport], list[RateDistribution] | None]:
    """Adapt rates independently for every input.

    Failures stay inside each report.  An instance that cannot be processed
    at all yields a report whose sites are all ``undefined-reference``.  With
    ``population_mode`` the per-site mean/std of converged rates is returned.
    """
    if len(inputs) == 0:
        raise ValueError("inputs must be nonempty")

    def one(i):
        try:
            return adapt_rates(net, inputs[i], cfg, instance_id=i)
        except ValueError as exc:
            log.warning("instance %d failed: %s", i, exc)
            return RateInReport(
                tuple(
                    SiteResult(s, 0.0, float("nan"), 0, False, "undefined-reference", cfg.epsilon(s), cfg.spec.delta)
                    for s in net.site_ids
                ),
                i,
            )

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(one, range(len(inputs))))
    else:
        reports = [one(i) for i in range(len(inputs))]
    if not population_mode:
        return reports, None
    return reports, population_rates(reports)


def population_rates(reports: Sequence[RateInReport]) -> list[RateDistribution]:
    out = []
    for site in [s.site_id for s in reports[0].sites]:
        rs = [r.site(site) for r in reports]
        conv = np.array([s.final_rate for s in rs if s.converged])
        out.append(
            RateDistribution(
                site,
                float(conv.mean()) if conv.size else float("nan"),
                float(conv.std()) if conv.size else float("nan"),
                int(conv.size),
                len(rs) - int(conv.size),
            )
        )
    return out


# -- record files ------------------------------------------------------------


def reports_to_csv(reports: Sequence[RateInReport], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for rep in reports:
        for s in rep.sites:
            w.writerow(
                [
                    rep.instance_id,
                    s.site_id,
                    repr(s.final_rate),
                    repr(s.final_delta_i),
                    s.iterations_used,
                    int(s.converged),
                    s.failure_reason or "",
                    repr(s.epsilon),
                    repr(s.delta),
                    " ".join(str(k) for k in s.measure_seeds),
                ]
            )
    return buf.getvalue()


def reports_from_csv(text: str) -> list[RateInReport]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows or tuple(rows[0].keys()) != REPORT_COLUMNS:
        raise ValueError("not a rate-in report file")
    by_instance: dict[int, list[SiteResult]] = {}
    for r in rows:
        by_instance.setdefault(int(r["instance_id"]), []).append(
            SiteResult(
                r["site_id"],
                float(r["final_rate"]),
                float(r["final_delta_i"]),
                int(r["iterations"]),
                bool(int(r["converged"])),
                r["failure_reason"] or None,
                float(r["epsilon"]),
                float(r["delta"]),
                tuple(int(k) for k in r["measure_seeds"].split()),
            )
        )
    return [RateInReport(tuple(v), k) for k, v in sorted(by_instance.items())]


def distribution_to_csv(dist: Sequence[RateDistribution], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["site_id", "mean_rate", "std_rate", "converged", "failed"])
    for d in dist:
        w.writerow([d.site_id, repr(d.mean), repr(d.std), d.count, d.failures])
    return buf.getvalue()


def strip_history(report: RateInReport) -> RateInReport:
    """The report as it survives a CSV round-trip (no per-iteration history)."""
    return replace(report, sites=tuple(replace(s, history=()) for s in report.sites))


def report_dict(report: RateInReport) -> dict:
    return {"instance_id": report.instance_id, "sites": [asdict(s) for s in report.sites]}
