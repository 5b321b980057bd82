"""Inference-time dropout-rate policies.

``rate_at(site, t)`` gives the rate for MC iteration ``t`` (1-based):

* constant:    ``p`` everywhere
* scheduled:   ``p * (1 - (t - 1) / (T - 1))``, reaching exactly 0 at ``t = T``
* activation:  ``p * CoV_l / max_j CoV_j`` from clean calibration activations
* from-rate-in: rates adapted by Rate-In, held fixed across iterations
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ratein.nn import Network, forward

log = logging.getLogger(__name__)

POLICY_KINDS = ("constant", "scheduled", "activation", "from-rate-in")


@dataclass(frozen=True)
class DropoutPolicy:
    kind: str
    p: float = 0.0
    total_iterations: int | None = None
    site_rates: Mapping[str, float] | None = None
    instance_rates: tuple[Mapping[str, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError("base rate must be in [0, 1)")
        if self.kind == "scheduled" and (self.total_iterations is None or self.total_iterations < 1):
            raise ValueError("scheduled policy needs total_iterations >= 1")
        for rates in [self.site_rates or {}, *(self.instance_rates or ())]:
            for s, r in rates.items():
                if not 0.0 <= r < 1.0:
                    raise ValueError(f"rate for {s!r} must be in [0, 1), got {r}")

    @classmethod
    def constant(cls, p: float) -> "DropoutPolicy":
        return cls("constant", p)

    @classmethod
    def scheduled(cls, p: float, total_iterations: int) -> "DropoutPolicy":
        return cls("scheduled", p, total_iterations)

    @classmethod
    def from_rate_in(cls, reports) -> "DropoutPolicy":
        """Policy holding one rate set per report (one report applies to every instance)."""
        if hasattr(reports, "sites"):
            reports = [reports]
        sets = tuple(dict(r.rates) for r in reports)
        if len(sets) == 1:
            return cls("from-rate-in", site_rates=sets[0])
        return cls("from-rate-in", instance_rates=sets)

    @property
    def per_instance(self) -> bool:
        return self.instance_rates is not None

    def rate_at(self, site_id: str, t: int, instance: int = 0) -> float:
        if t < 1 or (self.total_iterations is not None and t > self.total_iterations):
            raise ValueError(f"MC iteration {t} outside 1..{self.total_iterations or 'T'}")
        if self.kind == "constant":
            return self.p
        if self.kind == "scheduled":
            big_t = self.total_iterations
            if big_t == 1:
                return self.p
            return float(Fraction(self.p) * Fraction(big_t - t, big_t - 1))
        rates = self.instance_rates[instance] if self.instance_rates is not None else self.site_rates
        return float(rates[site_id])

    def rates_at(self, site_ids: Sequence[str], t: int, instance: int = 0) -> dict[str, float]:
        return {s: self.rate_at(s, t, instance) for s in site_ids}

    def check_sites(self, site_ids: Sequence[str]) -> None:
        for rates in [self.site_rates, *(self.instance_rates or ())]:
            if rates is None:
                continue
            if set(rates) != set(site_ids):
                raise ValueError(f"policy sites {sorted(rates)} do not match network sites {sorted(site_ids)}")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "p": self.p}
        if self.total_iterations is not None:
            d["total_iterations"] = self.total_iterations
        if self.site_rates is not None:
            d["site_rates"] = dict(self.site_rates)
        if self.instance_rates is not None:
            d["instance_rates"] = [dict(r) for r in self.instance_rates]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DropoutPolicy":
        inst = d.get("instance_rates")
        return cls(
            d["kind"],
            float(d.get("p", 0.0)),
            d.get("total_iterations"),
            dict(d["site_rates"]) if d.get("site_rates") is not None else None,
            tuple(dict(r) for r in inst) if inst is not None else None,
        )


def activation_cov(net: Network, calibration_inputs) -> dict[str, float]:
    """Pooled coefficient of variation ``std / mean(|X|)`` of each site's clean activations."""
    x = np.asarray(calibration_inputs, dtype=float)
    if x.size == 0:
        raise ValueError("calibration inputs must be nonempty")
    _, traces = forward(net, x)
    out = {}
    for tr in traces:
        vals = np.asarray(tr.pre, dtype=float).ravel()
        scale = np.mean(np.abs(vals))
        if scale == 0:
            log.warning("site %s has all-zero activations; CoV set to 0", tr.site_id)
            out[tr.site_id] = 0.0
        else:
            out[tr.site_id] = float(np.std(vals) / scale)
    return out


def activation_policy(net: Network, calibration_inputs, p_max: float) -> DropoutPolicy:
    if not net.site_ids:
        raise ValueError("network has no dropout sites")
    cov = activation_cov(net, calibration_inputs)
    top = max(cov.values())
    rates = {s: (p_max * c / top if top > 0 else 0.0) for s, c in cov.items()}
    return DropoutPolicy("activation", p_max, site_rates=rates)
