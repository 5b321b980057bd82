"""End-to-end experiment drivers on the synthetic sine-regression task.

Each driver returns its result rows and, given an output directory, writes a
summary CSV plus a long-format CSV (one row per repeat) ready for plotting.
Cells of a sweep run on a thread pool and are merged by cell key, so output
order never depends on completion order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ratein.adapt import RateInConfig, adapt_rates, adapt_rates_batch
from ratein.data import regression_splits
from ratein.info import InfoLossSpec, MIEstimatorConfig, measure_loss
from ratein.mc import mc_run
from ratein.metrics import picp_and_width
from ratein.nn import Network, TrainingDivergenceError, fit, forward, regression_arch
from ratein.policies import DropoutPolicy, activation_policy
from ratein.seeding import DEFAULT_SEED, derive_seed

log = logging.getLogger(__name__)

EXPERIMENTS = ("noise-sweep", "size-sweep", "convergence", "layer-sensitivity", "timing")
POLICY_NAMES = ("rate-in", "constant", "scheduled", "activation")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "noise-sweep"
    sigmas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    sizes: tuple[int, ...] = (25, 50, 100, 200)
    size_sigma: float = 0.01
    n_train: int = 100
    n_test: int = 100
    policies: tuple[dict, ...] = (
        {"kind": "rate-in", "epsilon": 0.1},
        {"kind": "constant", "p": 0.1},
        {"kind": "scheduled", "p": 0.1},
        {"kind": "activation", "p": 0.1},
    )
    ratein: RateInConfig = field(default_factory=RateInConfig)
    T: int = 30
    z: float = 1.96
    repeats: int = 5
    seed: int = DEFAULT_SEED
    epochs: int = 1000
    lr: float = 0.01
    hidden: tuple[int, ...] = (50, 50)
    # convergence study
    conv_sigma: float = 0.5
    conv_epsilons: tuple[float, ...] = (0.1, 0.3, 0.5)
    conv_p_inits: tuple[float, ...] = (0.05, 0.2, 0.35, 0.5, 0.7)
    conv_n_max: int = 100
    # layer sensitivity
    sens_sigma: float = 0.1
    sens_rates: tuple[float, ...] = (0.05, 0.1, 0.2, 0.4)
    sens_seeds: int = 30
    # timing
    timing_n: tuple[int, ...] = (10, 100, 1000)
    timing_p_inits: tuple[float, ...] = (0.05, 0.1, 0.2, 0.4)
    timing_epsilons: tuple[float, ...] = (0.05, 0.1, 0.2, 0.4)
    timing_sigmas: tuple[float, ...] = (0.1, 0.3, 0.5)
    timing_delta: float = 0.001
    workers: int = 1

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; valid: {', '.join(EXPERIMENTS)}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.name in ("noise-sweep", "size-sweep"):
            if not self.policies:
                raise ValueError("at least one policy is required")
            kinds = [p.get("kind") for p in self.policies]
            for k in kinds:
                if k not in POLICY_NAMES:
                    raise ValueError(f"unknown policy kind {k!r}")
            if "rate-in" not in kinds or "constant" not in kinds:
                raise ValueError("sweeps need a rate-in and a constant policy")
        if self.name == "convergence" and len(self.conv_p_inits) < 1:
            raise ValueError("need at least one initial rate")
        if self.name == "layer-sensitivity" and any(not 0 < r <= 0.95 for r in self.sens_rates):
            raise ValueError("sensitivity rates must lie in (0, 0.95]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratein"] = ratein_config_to_dict(self.ratein)
        return d


def ratein_config_to_dict(cfg: RateInConfig) -> dict:
    d = asdict(cfg)
    d["p_init"] = dict(cfg.p_init) if isinstance(cfg.p_init, dict) else cfg.p_init
    return d


def ratein_config_from_dict(d: dict) -> RateInConfig:
    d = dict(d)
    spec = dict(d.pop("spec", {}))
    mi = MIEstimatorConfig(**spec.pop("mi", {}))
    return RateInConfig(spec=InfoLossSpec(mi=mi, **spec), **d)


def spec_from_dict(d: dict) -> ExperimentSpec:
    d = dict(d)
    if "ratein" in d:
        d["ratein"] = ratein_config_from_dict(d["ratein"])
    for k, v in list(d.items()):
        if isinstance(v, list):
            d[k] = tuple(dict(e) if isinstance(e, dict) else e for e in v)
    return ExperimentSpec(**d)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- shared pieces -------------------------------------------------------------


def train_sine_net(n_train: int, sigma: float, seed: int, spec: ExperimentSpec):
    train, test = regression_splits(n_train, spec.n_test, sigma, seed)
    net, _ = fit(train.x[:, None], train.y, regression_arch(1, spec.hidden, 1), spec.epochs, spec.lr, seed)
    return net, train, test


def build_policy(entry: dict, net: Network, calib_x, test_x, spec: ExperimentSpec, seed: int) -> DropoutPolicy:
    kind = entry["kind"]
    if kind == "constant":
        return DropoutPolicy.constant(entry["p"])
    if kind == "scheduled":
        return DropoutPolicy.scheduled(entry["p"], spec.T)
    if kind == "activation":
        return activation_policy(net, calib_x, entry["p"])
    eps = entry.get("epsilon", entry.get("p", spec.ratein.spec.epsilon))
    cfg = replace(
        spec.ratein,
        spec=replace(spec.ratein.spec, epsilon=eps),
        p_init=entry.get("p_init", eps),
        seed=seed,
    )
    report = adapt_rates(net, test_x, cfg)
    return DropoutPolicy.from_rate_in(report)


def policy_label(entry: dict) -> str:
    if entry["kind"] == "rate-in":
        return f"rate-in(eps={entry.get('epsilon', entry.get('p'))})"
    return f"{entry['kind']}(p={entry['p']})"


def _map_cells(fn: Callable, cells: Sequence, workers: int) -> dict:
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(fn, cells))
    else:
        results = [fn(c) for c in cells]
    return dict(zip(cells, results))


# -- sweeps ---------------------------------------------------------------------

SWEEP_LONG_COLUMNS = ("axis", "value", "repeat", "policy", "picp", "width", "ier", "failure")
SWEEP_COLUMNS = ("policy", "picp", "width", "ier", "repeats", "std", "failures")


def _sweep_cell(spec: ExperimentSpec, sigma: float, n_train: int, repeat: int) -> list[dict]:
    seed = spec.seed + repeat
    try:
        net, train, test = train_sine_net(n_train, sigma, seed, spec)
    except TrainingDivergenceError as exc:
        return [dict(policy=policy_label(p), picp=math.nan, width=math.nan, ier=math.nan, failure=str(exc)) for p in spec.policies]
    rows = []
    for j, entry in enumerate(spec.policies):
        pol_seed = derive_seed(seed, 11, j)
        try:
            pol = build_policy(entry, net, train.x[:, None], test.x[:, None], spec, pol_seed)
            s = mc_run(net, test.x[:, None], pol, spec.T, spec.z, seed=derive_seed(seed, 12, j))
            picp, width, ier = picp_and_width(test.y, s.mean, s.std, spec.z)
            rows.append(dict(policy=policy_label(entry), picp=picp, width=width, ier=ier, failure=""))
        except (ValueError, RuntimeError) as exc:
            rows.append(dict(policy=policy_label(entry), picp=math.nan, width=math.nan, ier=math.nan, failure=str(exc)))
    return rows


def _run_sweep(spec: ExperimentSpec, axis: str, values: Sequence, out_dir=None):
    cells = [(v, r) for v in values for r in range(spec.repeats)]
    if axis == "sigma":
        fn = lambda c: _sweep_cell(spec, c[0], spec.n_train, c[1])
    else:
        fn = lambda c: _sweep_cell(spec, spec.size_sigma, c[0], c[1])
    results = _map_cells(fn, cells, spec.workers)

    long_rows = []
    for (v, r) in cells:
        for row in results[(v, r)]:
            long_rows.append(dict(axis=axis, value=v, repeat=r, **row))
    summary = []
    for v in values:
        for entry in spec.policies:
            label = policy_label(entry)
            cell = [row for row in long_rows if row["value"] == v and row["policy"] == label]
            ok = [row for row in cell if not row["failure"]]
            iers = np.array([row["ier"] for row in ok])
            summary.append(
                {
                    axis: v,
                    "policy": label,
                    "picp": float(np.median([row["picp"] for row in ok])) if ok else math.nan,
                    "width": float(np.median([row["width"] for row in ok])) if ok else math.nan,
                    "ier": float(np.median(iers)) if ok else math.nan,
                    "repeats": len(ok),
                    "std": float(np.std(iers)) if ok else math.nan,
                    "failures": len(cell) - len(ok),
                }
            )
    if out_dir is not None:
        stem = "noise_sweep" if axis == "sigma" else "size_sweep"
        comment = provenance_comment(spec)
        write_csv(Path(out_dir) / f"{stem}.csv", (axis, *SWEEP_COLUMNS), summary, comment)
        write_csv(Path(out_dir) / f"{stem}_long.csv", SWEEP_LONG_COLUMNS, long_rows, comment)
    return summary, long_rows


def run_noise_sweep(spec: ExperimentSpec, out_dir=None):
    """Interval efficiency over noise levels at fixed training size."""
    return _run_sweep(spec, "sigma", spec.sigmas, out_dir)


def run_size_sweep(spec: ExperimentSpec, out_dir=None):
    """Interval efficiency over training-set sizes at ``size_sigma``."""
    return _run_sweep(spec, "n_train", spec.sizes, out_dir)


def ier_wins(summary: Sequence[dict], axis: str, challenger: str, baseline: str) -> tuple[int, int]:
    """Count axis values where the challenger's median IER is <= the baseline's."""
    values = sorted({row[axis] for row in summary})
    wins = 0
    for v in values:
        by = {row["policy"]: row["ier"] for row in summary if row[axis] == v}
        if by[challenger] <= by[baseline]:
            wins += 1
    return wins, len(values)


# -- convergence vs initial rate --------------------------------------------------

CONV_COLUMNS = ("epsilon", "p_init", "site_id", "mean_rate", "std_rate", "converged", "failed")
CONV_LONG_COLUMNS = ("epsilon", "p_init", "repeat", "site_id", "final_rate", "final_delta_i", "iterations", "converged", "failure_reason")


def run_convergence_study(spec: ExperimentSpec, out_dir=None):
    """Final Rate-In rate as a function of the initial rate, per threshold and site."""
    nets = {}
    for r in range(spec.repeats):
        seed = spec.seed + r
        net, _, test = train_sine_net(spec.n_train, spec.conv_sigma, seed, spec)
        nets[r] = (net, test.x[:, None], seed)

    def cell(c):
        eps, p0, r = c
        net, x, seed = nets[r]
        cfg = replace(
            spec.ratein,
            spec=replace(spec.ratein.spec, epsilon=eps),
            p_init=p0,
            n_max=spec.conv_n_max,
            seed=seed,
        )
        return adapt_rates(net, x, cfg)

    cells = [(e, p, r) for e in spec.conv_epsilons for p in spec.conv_p_inits for r in range(spec.repeats)]
    reports = _map_cells(cell, cells, spec.workers)
    long_rows = []
    for (e, p, r) in cells:
        for s in reports[(e, p, r)].sites:
            long_rows.append(
                dict(
                    epsilon=e,
                    p_init=p,
                    repeat=r,
                    site_id=s.site_id,
                    final_rate=s.final_rate,
                    final_delta_i=s.final_delta_i,
                    iterations=s.iterations_used,
                    converged=int(s.converged),
                    failure_reason=s.failure_reason or "",
                )
            )
    summary = []
    sites = [s.site_id for s in next(iter(reports.values())).sites]
    for e in spec.conv_epsilons:
        for p in spec.conv_p_inits:
            for site in sites:
                rows = [x for x in long_rows if x["epsilon"] == e and x["p_init"] == p and x["site_id"] == site]
                conv = np.array([x["final_rate"] for x in rows if x["converged"]])
                summary.append(
                    dict(
                        epsilon=e,
                        p_init=p,
                        site_id=site,
                        mean_rate=float(conv.mean()) if conv.size else math.nan,
                        std_rate=float(conv.std()) if conv.size else math.nan,
                        converged=int(conv.size),
                        failed=len(rows) - int(conv.size),
                    )
                )
    if out_dir is not None:
        comment = provenance_comment(spec)
        write_csv(Path(out_dir) / "convergence.csv", CONV_COLUMNS, summary, comment)
        write_csv(Path(out_dir) / "convergence_long.csv", CONV_LONG_COLUMNS, long_rows, comment)
    return summary, long_rows


def init_invariance_ranges(long_rows: Sequence[dict]) -> list[dict]:
    """Max-min final rate across initial rates, for (eps, repeat, site) converged under every init."""
    groups: dict = {}
    for row in long_rows:
        groups.setdefault((row["epsilon"], row["repeat"], row["site_id"]), []).append(row)
    out = []
    for (e, r, s), rows in sorted(groups.items()):
        if all(x["converged"] for x in rows):
            rates = [x["final_rate"] for x in rows]
            out.append(dict(epsilon=e, repeat=r, site_id=s, range=max(rates) - min(rates), n_inits=len(rows)))
    return out


# -- layer sensitivity ------------------------------------------------------------

SENS_COLUMNS = ("estimator", "site_id", "rate", "mean_delta_i", "std_delta_i", "samples")


def layer_sensitivity(net: Network, x, rates: Iterable[float], seeds: int, spec: InfoLossSpec, seed: int = 0) -> list[dict]:
    """Mean loss at each site when only that site drops at each rate."""
    x = np.asarray(x, dtype=float)
    _, clean = forward(net, x)
    rows = []
    for idx, site in enumerate(net.site_ids):
        i_full = None
        for rate in rates:
            vals = []
            for k in range(seeds):
                r = {s: 0.0 for s in net.site_ids}
                r[site] = rate
                _, tr = forward(net, x, r, mask_seed=derive_seed(seed, idx, k), stop_at=site)
                m = measure_loss(spec, x, tr[-1].pre, tr[-1].post, i_full=i_full)
                i_full = m.i_full if spec.estimator == "mi" else None
                vals.append(m.delta_i)
            rows.append(
                dict(
                    estimator=spec.estimator,
                    site_id=site,
                    rate=rate,
                    mean_delta_i=float(np.mean(vals)),
                    std_delta_i=float(np.std(vals)),
                    samples=seeds,
                )
            )
    return rows


def run_layer_sensitivity(spec: ExperimentSpec, out_dir=None):
    net, _, test = train_sine_net(spec.n_train, spec.sens_sigma, spec.seed, spec)
    x = test.x[:, None]
    rows = []
    for est in ("mi", "ssim"):
        loss_spec = replace(spec.ratein.spec, estimator=est)
        rows += layer_sensitivity(net, x, spec.sens_rates, spec.sens_seeds, loss_spec, spec.seed)
    if out_dir is not None:
        write_csv(Path(out_dir) / "layer_sensitivity.csv", SENS_COLUMNS, rows, provenance_comment(spec))
    return rows, rows


def monotone_violations(rows: Sequence[dict]) -> dict[tuple[str, str], int]:
    """Adjacent-rate decreases of mean loss per (estimator, site)."""
    out = {}
    keys = sorted({(r["estimator"], r["site_id"]) for r in rows})
    for key in keys:
        seq = sorted((r["rate"], r["mean_delta_i"]) for r in rows if (r["estimator"], r["site_id"]) == key)
        out[key] = sum(1 for a, b in zip(seq, seq[1:]) if b[1] < a[1])
    return out


# -- timing -----------------------------------------------------------------------

TIMING_COLUMNS = ("axis", "value", "mean_s", "std_s", "worst_s", "repeats")


def time_rate_in(net: Network, x, cfg: RateInConfig) -> float:
    t0 = time.perf_counter()
    adapt_rates(net, x, cfg)
    return time.perf_counter() - t0


def run_timing(
    spec: ExperimentSpec,
    out_dir=None,
    axes: Sequence[str] = ("n", "batch_n", "p_init", "epsilon", "sigma"),
):
    """Rate-In wall time while varying one of (instances, batch size, p_init, eps, sigma).

    The ``n`` axis adapts ``n`` instances one at a time (per-instance
    ``layer-input`` MI); ``batch_n`` adapts one batch of ``n`` rows with the
    batch-level MI.  The other axes time one batch of ``n_test`` rows.  Wall
    times are machine-dependent, so this is the one output that is not
    byte-reproducible.
    """
    base_cfg = replace(spec.ratein, spec=replace(spec.ratein.spec, delta=spec.timing_delta))
    nets = {}

    def net_for(sigma, r):
        if (sigma, r) not in nets:
            nets[(sigma, r)] = train_sine_net(spec.n_train, sigma, spec.seed + r, spec)[0]
        return nets[(sigma, r)]

    rows = []
    grids = {
        "n": spec.timing_n,
        "batch_n": spec.timing_n,
        "p_init": spec.timing_p_inits,
        "epsilon": spec.timing_epsilons,
        "sigma": spec.timing_sigmas,
    }
    per_instance_cfg = replace(base_cfg, spec=replace(base_cfg.spec, reference="layer-input"))
    for axis in axes:
        for v in grids[axis]:
            times = []
            for r in range(spec.repeats):
                sigma = v if axis == "sigma" else spec.sens_sigma
                n = v if axis in ("n", "batch_n") else spec.n_test
                net = net_for(sigma, r)
                x = regression_splits(1, n, sigma, spec.seed + r)[1].x[:, None]
                cfg = replace(base_cfg, seed=spec.seed + r)
                if axis == "p_init":
                    cfg = replace(cfg, p_init=v)
                elif axis == "epsilon":
                    cfg = replace(cfg, spec=replace(cfg.spec, epsilon=v))
                if axis == "n":
                    t0 = time.perf_counter()
                    adapt_rates_batch(net, list(x), replace(per_instance_cfg, seed=spec.seed + r))
                    times.append(time.perf_counter() - t0)
                else:
                    times.append(time_rate_in(net, x, cfg))
            t = np.array(times)
            rows.append(dict(axis=axis, value=v, mean_s=float(t.mean()), std_s=float(t.std()), worst_s=float(t.max()), repeats=len(t)))
    if out_dir is not None:
        write_csv(Path(out_dir) / "timing.csv", TIMING_COLUMNS, rows, provenance_comment(spec))
    return rows, rows


def linear_fit_r2(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum(resid**2) / ss_tot) if ss_tot > 0 else 1.0


RUNNERS = {
    "noise-sweep": run_noise_sweep,
    "size-sweep": run_size_sweep,
    "convergence": run_convergence_study,
    "layer-sensitivity": run_layer_sensitivity,
    "timing": run_timing,
}


def run_experiment(spec: ExperimentSpec, out_dir=None):
    return RUNNERS[spec.name](spec, out_dir)


# -- output ---------------------------------------------------------------------------


def provenance_comment(spec: ExperimentSpec) -> str:
    # results do not depend on the worker count, so it stays out of the hash
    d = spec.to_dict()
    d.pop("workers")
    return f"config_hash={config_hash(d)} seed={spec.seed}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns: Sequence[str], rows: Sequence[dict], comment: str | None = None) -> str:
    """Render rows after checking each has exactly the declared columns."""
    for i, row in enumerate(rows):
        if set(row) != set(columns):
            raise ValueError(f"row {i} has columns {sorted(row)}, expected {sorted(columns)}")
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], rows: Sequence[dict], comment: str | None = None) -> None:
    text = csv_text(columns, rows, comment)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
