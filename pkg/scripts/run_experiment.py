"""Run one of the experiment suites with its default settings and print a digest.

    python3 scripts/run_experiment.py noise-sweep --out results/noise
    python3 scripts/run_experiment.py all --out results --workers 4
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from ratein import experiments as ex

RATEIN = "rate-in(eps=0.1)"
CONSTANT = "constant(p=0.1)"


def digest(name: str, rows) -> None:
    if name in ("noise-sweep", "size-sweep"):
        axis = "sigma" if name == "noise-sweep" else "n_train"
        for row in rows:
            print(f"  {axis}={row[axis]:<6} {row['policy']:<22} picp={row['picp']:.3f} width={row['width']:.3f} ier={row['ier']:.3f}")
        wins, total = ex.ier_wins(rows, axis, RATEIN, CONSTANT)
        print(f"  rate-in has the lower median IER in {wins}/{total} cells")
    elif name == "convergence":
        ranges = ex.init_invariance_ranges(rows)
        worst = max((r["range"] for r in ranges), default=float("nan"))
        print(f"  {len(ranges)} fully converged groups, worst final-rate range across p_init {worst:.4f}")
    elif name == "layer-sensitivity":
        for (est, site), v in sorted(ex.monotone_violations(rows).items()):
            print(f"  {est}/{site}: {v} adjacent decreases")
    elif name == "timing":
        for row in rows:
            print(f"  {row['axis']:<8} {row['value']:<6} {row['mean_s']:.3f}s")
        n_rows = [r for r in rows if r["axis"] == "n"]
        if len(n_rows) > 1:
            r2 = ex.linear_fit_r2([r["value"] for r in n_rows], [r["mean_s"] for r in n_rows])
            print(f"  linear fit over instance count: R^2={r2:.4f}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("name", choices=(*ex.EXPERIMENTS, "all"))
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--repeats", type=int, default=None, help="override the repeat count")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    names = ex.EXPERIMENTS if args.name == "all" else (args.name,)
    for name in names:
        spec = ex.ExperimentSpec(name=name, workers=args.workers)
        if args.repeats is not None:
            spec = replace(spec, repeats=args.repeats)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        out = args.out / name if args.name == "all" else args.out
        summary, long_rows = ex.run_experiment(spec, out)
        print(f"{name} -> {out}")
        digest(name, long_rows if name == "convergence" else summary)


if __name__ == "__main__":
    main()
