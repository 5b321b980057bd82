"""Command-line entry point.

    ratein {train,ratein,mc,evaluate,experiment} --config RUN.yaml [--seed N]
           [--workers N] [--out DIR] [--dry-run]

A run config is a YAML file with ``version: 1``, optional global keys
(``seed``, ``workers``, ``out``) and one section named after the subcommand.
Command-line flags override the file.  The whole config is validated before
anything is written.  Exit codes: 0 success, 2 config/usage error, 3 runtime
failure.  ``RATEIN_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ratein import adapt, data, experiments, mc, metrics, nn
from ratein.policies import DropoutPolicy, activation_policy
from ratein.seeding import DEFAULT_SEED

log = logging.getLogger("ratein")

CONFIG_VERSION = 1
SUBCOMMANDS = ("train", "ratein", "mc", "evaluate", "experiment")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    section: dict
    seed: int = DEFAULT_SEED
    workers: int = 1
    out: Path = Path("out")
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return experiments.config_hash({"command": self.command, "seed": self.seed, "section": self.section})

    @property
    def comment(self) -> str:
        return f"config_hash={self.hash} seed={self.seed}"


def load_config(command: str, path: str | None, overrides: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        if raw.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    section = raw.get(command, {}) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"section {command!r} must be a mapping")
    seed = overrides.seed if overrides.seed is not None else raw.get("seed", DEFAULT_SEED)
    workers = overrides.workers if overrides.workers is not None else raw.get("workers", 1)
    out = overrides.out if overrides.out is not None else raw.get("out", "out")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    return RunConfig(command, dict(section), seed, workers, Path(out), raw)


def _check_out_dir(out: Path) -> None:
    probe = out
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise ConfigError(f"output directory not writable: {out}")


def _need_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what} path is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _number(section: dict, key: str, default, lo=None, hi=None, kind=float, lo_open=False, hi_open=False):
    v = section.get(key, default)
    if kind is int and (not isinstance(v, int) or isinstance(v, bool)):
        raise ConfigError(f"{key} must be an integer")
    if kind is float and not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{key}={v} below allowed range")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(f"{key}={v} above allowed range")
    return kind(v)


# -- inputs -----------------------------------------------------------------------


@dataclass
class Table:
    x: np.ndarray
    y: np.ndarray | None = None
    labels: np.ndarray | None = None


def _validate_inputs(spec, seed: int) -> dict:
    if spec is None:
        raise ConfigError("inputs are required")
    if not isinstance(spec, dict):
        raise ConfigError("inputs must be a mapping")
    if "csv" in spec:
        _need_file(spec["csv"], "input CSV")
        return {"csv": spec["csv"]}
    kind = spec.get("kind", "regression")
    if kind == "regression":
        return {
            "kind": kind,
            "n": _number(spec, "n", 100, 1, kind=int),
            "sigma": _number(spec, "sigma", 0.1, 0.0),
            "seed": _number(spec, "seed", seed, 0, kind=int),
            "split": spec.get("split", "test"),
            "n_train": _number(spec, "n_train", spec.get("n", 100), 1, kind=int),
        }
    if kind == "blobs":
        return {
            "kind": kind,
            "n": _number(spec, "n", 200, 1, kind=int),
            "classes": _number(spec, "classes", 2, 2, kind=int),
            "separation": _number(spec, "separation", 4.0, 0.0),
            "seed": _number(spec, "seed", seed, 0, kind=int),
        }
    raise ConfigError(f"unknown input kind {kind!r}")


def _load_inputs(spec: dict) -> Table:
    if "csv" in spec:
        rows = data.read_csv_rows(spec["csv"])
        if not rows:
            raise ConfigError(f"empty input CSV {spec['csv']}")
        cols = list(rows[0].keys())
        xcols = [c for c in cols if c == "x" or (c.startswith("x") and c[1:].isdigit())]
        if not xcols:
            raise ConfigError("input CSV needs an 'x' or 'x0..' column")
        x = np.array([[float(r[c]) for c in xcols] for r in rows])
        y = np.array([float(r["y"]) for r in rows]) if "y" in cols else None
        labels = np.array([int(r["label"]) for r in rows]) if "label" in cols else None
        return Table(x, y, labels)
    if spec["kind"] == "regression":
        train, test = data.regression_splits(spec["n_train"], spec["n"], spec["sigma"], spec["seed"])
        ds = train if spec["split"] == "train" else test
        return Table(ds.x[:, None], ds.y)
    ds = data.gen_blobs(spec["n"], spec["classes"], spec["separation"], spec["seed"])
    return Table(ds.x, labels=ds.labels)


def _table_csv(t: Table, comment: str) -> str:
    cols = ["x"] if t.x.shape[1] == 1 else [f"x{i}" for i in range(t.x.shape[1])]
    rows = []
    for i in range(t.x.shape[0]):
        row = {c: float(t.x[i, j]) for j, c in enumerate(cols)}
        if t.y is not None:
            row["y"] = float(t.y[i])
        if t.labels is not None:
            row["label"] = int(t.labels[i])
        rows.append(row)
    if t.y is not None:
        cols.append("y")
    if t.labels is not None:
        cols.append("label")
    return experiments.csv_text(cols, rows, comment)


# -- subcommands -------------------------------------------------------------------


def _plan_train(cfg: RunConfig):
    s = cfg.section
    task = s.get("task", "regression")
    if task not in ("regression", "classification"):
        raise ConfigError(f"unknown task {task!r}")
    data_spec = _validate_inputs(s.get("data", {"kind": "regression" if task == "regression" else "blobs", "split": "train"}), cfg.seed)
    hidden = s.get("hidden", [50, 50])
    if not isinstance(hidden, list) or not all(isinstance(h, int) and h > 0 for h in hidden):
        raise ConfigError("hidden must be a list of positive integers")
    epochs = _number(s, "epochs", 1000, 0, kind=int)
    lr = _number(s, "lr", 0.01, 0.0, lo_open=True)
    _check_out_dir(cfg.out)

    def run():
        table = _load_inputs(data_spec)
        if task == "regression":
            if table.y is None:
                raise ConfigError("regression data needs a 'y' column")
            arch = nn.regression_arch(table.x.shape[1], hidden, 1)
            net, hist = nn.fit(table.x, table.y, arch, epochs, lr, cfg.seed, "mse")
        else:
            if table.labels is None:
                raise ConfigError("classification data needs a 'label' column")
            classes = int(s.get("classes", int(table.labels.max()) + 1))
            arch = nn.regression_arch(table.x.shape[1], hidden, classes)
            if np.any(table.labels < 0) or np.any(table.labels >= classes):
                raise ConfigError(f"labels must lie in [0, {classes})")
            net, hist = nn.fit(table.x, table.labels, arch, epochs, lr, cfg.seed, "xent")
        cfg.out.mkdir(parents=True, exist_ok=True)
        nn.save_network(net, cfg.out / "model.json", {"config_hash": cfg.hash, "seed": cfg.seed})
        (cfg.out / "train_loss.csv").write_text(
            experiments.csv_text(("epoch", "loss"), [{"epoch": i + 1, "loss": float(v)} for i, v in enumerate(hist)], cfg.comment)
        )
        (cfg.out / "train_data.csv").write_text(_table_csv(table, cfg.comment))
        final = float(hist[-1]) if len(hist) else float("nan")
        log.info("trained %s model, final loss %.6g", task, final)

    return run


def _ratein_config(s: dict, seed: int) -> adapt.RateInConfig:
    d = dict(s.get("config", {}))
    spec = dict(d.get("spec", {}))
    eps = spec.get("epsilon", 0.1)
    if not isinstance(eps, (int, float)) or not 0 < eps < 1:
        raise ConfigError(f"epsilon must be in (0, 1), got {eps!r}")
    d.setdefault("seed", seed)
    d["spec"] = spec
    try:
        return experiments.ratein_config_from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid rate-in config: {exc}") from exc


def _plan_ratein(cfg: RunConfig):
    s = cfg.section
    model_path = _need_file(s.get("model"), "model")
    inputs = _validate_inputs(s.get("inputs"), cfg.seed)
    rcfg = _ratein_config(s, cfg.seed)
    mode = s.get("mode", "batch")
    if mode not in ("batch", "per-instance"):
        raise ConfigError("mode must be 'batch' or 'per-instance'")
    if mode == "per-instance" and rcfg.spec.needs_batch:
        raise ConfigError("network-input MI is batch-level; use mode: batch or reference: layer-input")
    population = bool(s.get("population", mode == "per-instance"))
    _check_out_dir(cfg.out)

    def run():
        net = nn.load_network(model_path)
        table = _load_inputs(inputs)
        if mode == "batch":
            reports = [adapt.adapt_rates(net, table.x, rcfg)]
            dist = adapt.population_rates(reports) if population else None
        else:
            reports, dist = adapt.adapt_rates_batch(net, list(table.x), rcfg, population, cfg.workers)
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "ratein_report.csv").write_text(adapt.reports_to_csv(reports, cfg.comment))
        if dist is not None:
            (cfg.out / "ratein_population.csv").write_text(adapt.distribution_to_csv(dist, cfg.comment))
        n_fail = sum(not st.converged for r in reports for st in r.sites)
        log.info("rate-in: %d reports, %d unconverged sites", len(reports), n_fail)

    return run


def _policy_from_section(p, T: int):
    if not isinstance(p, dict) or "kind" not in p:
        raise ConfigError("policy must be a mapping with a 'kind'")
    kind = p["kind"]
    if kind == "from-rate-in":
        path = _need_file(p.get("report"), "rate-in report")
        try:
            reports = adapt.reports_from_csv(path.read_text())
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return lambda net, x: DropoutPolicy.from_rate_in(reports)
    if kind == "constant":
        pol = DropoutPolicy.constant(_number(p, "p", 0.1, 0.0, 1.0, hi_open=True))
        return lambda net, x: pol
    if kind == "scheduled":
        pol = DropoutPolicy.scheduled(_number(p, "p", 0.1, 0.0, 1.0, hi_open=True), T)
        return lambda net, x: pol
    if kind == "activation":
        pmax = _number(p, "p", 0.1, 0.0, 1.0, hi_open=True)
        return lambda net, x: activation_policy(net, x, pmax)
    if kind == "explicit":
        try:
            pol = DropoutPolicy.from_dict(p["policy"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid explicit policy: {exc}") from exc
        return lambda net, x: pol
    raise ConfigError(f"unknown policy kind {kind!r}")


def _task_metrics(task: str, table: Table, summary: mc.McSummary, probs=None, unc=None, z: float = 1.96) -> list[dict]:
    rows = []
    if task == "regression" and table.y is not None:
        picp, width, ier = metrics.picp_and_width(table.y, summary.mean[:, 0], summary.std[:, 0], z)
        rows += [
            {"metric": "mse", "value": metrics.mse(table.y, summary.mean[:, 0])},
            {"metric": "picp", "value": picp},
            {"metric": "width", "value": width},
            {"metric": "ier", "value": ier},
        ]
    if task == "classification" and table.labels is not None:
        pred = probs.argmax(axis=1)
        correct = (pred == table.labels).astype(float)
        rows += [
            {"metric": "acc", "value": metrics.acc(table.labels, pred)},
            {"metric": "auarc", "value": metrics.auarc(correct, unc)},
            {"metric": "ece", "value": metrics.ece(unc, 1.0 - correct)},
        ]
    return rows


def _plan_mc(cfg: RunConfig):
    s = cfg.section
    model_path = _need_file(s.get("model"), "model")
    inputs = _validate_inputs(s.get("inputs"), cfg.seed)
    T = _number(s, "T", 30, 2, kind=int)
    z = _number(s, "z", 1.96, 0.0, lo_open=True)
    task = s.get("task", "regression")
    if task not in ("regression", "classification"):
        raise ConfigError(f"unknown task {task!r}")
    make_policy = _policy_from_section(s.get("policy", {"kind": "constant", "p": 0.1}), T)
    net = nn.load_network(model_path)
    table = _load_inputs(inputs)
    try:
        policy = make_policy(net, table.x)
        policy.check_sites(net.site_ids)
        if policy.per_instance and len(policy.instance_rates) != table.x.shape[0]:
            raise ValueError(f"report has {len(policy.instance_rates)} instances, inputs have {table.x.shape[0]}")
    except ValueError as exc:
        raise ConfigError(f"policy/model mismatch: {exc}") from exc
    _check_out_dir(cfg.out)

    def run():
        summary = mc.mc_run(net, table.x, policy, T, z, cfg.seed)
        probs = unc = None
        if task == "classification":
            probs, unc = mc.mc_classify(net, table.x, policy, T, cfg.seed)
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "mc_summary.csv").write_text(mc.summary_to_csv(summary, cfg.comment))
        rows = _task_metrics(task, table, summary, probs, unc, z)
        if rows:
            (cfg.out / "mc_metrics.csv").write_text(experiments.csv_text(("metric", "value"), rows, cfg.comment))

    return run


def _plan_evaluate(cfg: RunConfig):
    s = cfg.section
    task = s.get("task", "regression")
    _check_out_dir(cfg.out)
    if task == "regression":
        summ_path = _need_file(s.get("summaries"), "summaries")
        inputs = _validate_inputs(s.get("data"), cfg.seed)
        z = _number(s, "z", 1.96, 0.0, lo_open=True)

        def compute():
            summary = mc.summary_from_csv(summ_path.read_text(), z)
            table = _load_inputs(inputs)
            if table.y is None:
                raise ConfigError("evaluation data needs a 'y' column")
            return _task_metrics("regression", table, summary, z=z)

    elif task == "segmentation":
        paths = {k: _need_file(s.get(k), k) for k in ("pred_mask", "true_mask", "uncertainty")}
        n_bins = _number(s, "n_bins", 15, 1, kind=int)
        band = _number(s, "band_width", 5, 1, kind=int)

        def compute():
            pred = data.load_grid_csv(paths["pred_mask"]) > 0.5
            true = data.load_grid_csv(paths["true_mask"]) > 0.5
            unc = data.load_grid_csv(paths["uncertainty"])
            return [
                {"metric": "dsc", "value": metrics.dsc(pred, true)},
                {"metric": "ece", "value": metrics.ece(unc.ravel(), (pred != true).ravel().astype(float), n_bins)},
                {"metric": "buc", "value": metrics.buc(unc, true, band)},
            ]

    else:
        raise ConfigError(f"unknown task {task!r}")

    def run():
        rows = compute()
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "metrics.csv").write_text(experiments.csv_text(("metric", "value"), rows, cfg.comment))

    return run


def _plan_experiment(cfg: RunConfig):
    s = dict(cfg.section)
    s.setdefault("seed", cfg.seed)
    s["workers"] = cfg.workers
    if "name" not in s:
        raise ConfigError(f"experiment name is required; valid: {', '.join(experiments.EXPERIMENTS)}")
    if s["name"] not in experiments.EXPERIMENTS:
        raise ConfigError(f"unknown experiment {s['name']!r}; valid: {', '.join(experiments.EXPERIMENTS)}")
    try:
        spec = experiments.spec_from_dict(s)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc
    _check_out_dir(cfg.out)

    def run():
        experiments.run_experiment(spec, cfg.out)

    return run


PLANNERS = {
    "train": _plan_train,
    "ratein": _plan_ratein,
    "mc": _plan_mc,
    "evaluate": _plan_evaluate,
    "experiment": _plan_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratein", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("RATEIN_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.command, args.config, args)
        run = PLANNERS[args.command](cfg)
    except ConfigError as exc:
        print(f"ratein {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"ratein {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        print(f"ratein {args.command}: config OK ({cfg.comment})")
        return EXIT_OK
    try:
        run()
    except ConfigError as exc:
        print(f"ratein {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 3
        log.exception("runtime failure")
        print(f"ratein {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
