"""Command-line entry point.

Exit codes: 0 on success, 2 when the detector hit ``--max-iter`` without
converging (results are still written), 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

from . import data as io
from .errors import ConvergenceWarning, RegimeScanError
from .models import MODEL_KINDS
from .pipeline import RunConfig, fit_all_models, load, partition_from_labels, run_bandwidth, run_detect, run_pipeline
from .spatial import KERNEL_FAMILIES, METRICS

log = logging.getLogger("regimescan")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _models(text: str) -> list[str]:
    kinds = [k.strip().lower() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"unknown model kind(s) {bad}; choose from {', '.join(MODEL_KINDS)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="CSV dataset")
    common.add_argument("--config", dest="columns", help="JSON file with column roles")
    common.add_argument("--metric", choices=METRICS, help="override the metric in --config")
    common.add_argument("--kernel", choices=KERNEL_FAMILIES, default="gaussian")
    common.add_argument("--bandwidth", type=int, help="fixed neighbour count; skips AICc search")
    common.add_argument("--full-grid", action="store_true", help="exhaustive AICc search")
    common.add_argument("--tau", type=float, default=0.001)
    common.add_argument("--alpha", type=float, help="set tau from a chi-square level instead")
    common.add_argument("--eta", type=float, default=0.5)
    common.add_argument("--omega", type=float, default=0.0001)
    common.add_argument("--threshold", type=float, default=0.5)
    common.add_argument("--max-iter", type=int, default=500)
    common.add_argument("--models", type=_models, default=list(MODEL_KINDS), help="comma-separated")
    common.add_argument("--knn", type=int, default=10, help="neighbours in the spatial weights matrix")
    common.add_argument("--regime-variance", action="store_true")
    common.add_argument("--out", default="out")
    common.add_argument("--threads", type=int, help="worker threads (env REGIMESCAN_THREADS)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trace", action="store_true", help="write per-iteration trace.jsonl")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="regimescan", description="Detect spatial regimes and compare spatial models.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bandwidth", parents=[common], help="AICc bandwidth search")
    sub.add_parser("detect", parents=[common], help="bandwidth + regime detection")
    fit = sub.add_parser("fit", parents=[common], help="global and regime models")
    fit.add_argument("--labels", help="CSV with a 'label' column (omit for global fits only)")
    sub.add_parser("pipeline", parents=[common], help="bandwidth, detection, fits and comparison")
    synth = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    synth.add_argument("--layout", choices=("single", "halfplane", "quadrant"), default="halfplane")
    synth.add_argument("-n", type=int, default=200)
    synth.add_argument("-p", type=int, default=3)
    synth.add_argument("--delta", type=float, default=3.5, help="coefficient gap between regimes")
    synth.add_argument("--noise", type=float, default=1.0)
    synth.add_argument("--rho", type=float, help="SAR dependence in the response")
    sub.add_parser("trace", parents=[common], help="convert <out>/trace.jsonl to trace.csv")
    return parser


def _config(args) -> RunConfig:
    return RunConfig(
        data=args.data,
        columns=args.columns,
        kernel=args.kernel,
        bandwidth=args.bandwidth,
        full_grid=args.full_grid,
        tau=args.tau,
        alpha=args.alpha,
        eta=args.eta,
        omega=args.omega,
        threshold=args.threshold,
        max_iter=args.max_iter,
        models=args.models,
        knn=args.knn,
        metric=args.metric,
        regime_variance=args.regime_variance,
        out=args.out,
        threads=args.threads,
        seed=args.seed,
        trace=args.trace,
    )


def cmd_bandwidth(cfg: RunConfig) -> int:
    search = run_bandwidth(load(cfg), cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bandwidth.csv", "w", encoding="utf-8") as fh:
        fh.write("k,aicc\n")
        for k, s in search.curve():
            fh.write(f"{k},{s!r}\n")
    for k, s in search.curve():
        print(f"{k:>5}  {s:.4f}{'  <- chosen' if k == search.chosen else ''}")
    print(f"bandwidth k={search.chosen}")
    return EXIT_OK


def _write_labels(labels, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,label\n")
        for i, lab in enumerate(labels, start=1):
            fh.write(f"{i},{int(lab)}\n")


def _read_labels(path) -> list[int]:
    import csv

    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [int(r["label"]) for r in csv.DictReader(fh)]
    except (OSError, KeyError, ValueError) as exc:
        raise io.IoError(f"cannot read labels from {path}: {exc}") from exc


def cmd_detect(cfg: RunConfig) -> int:
    data = load(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        det = run_detect(data, cfg)
    out = Path(cfg.out)
    _write_labels(det.partition.labels, out / "labels.csv")
    if cfg.trace:
        io.write_trace(det.trace, out / "trace.jsonl")
    print(f"bandwidth k={det.bandwidth} iterations={det.state.iteration} regimes={det.partition.c} sizes={det.partition.sizes}")
    return EXIT_OK if det.converged else EXIT_NOT_CONVERGED


def cmd_fit(cfg: RunConfig, labels: str | None) -> int:
    from .models import compare_models

    data = load(cfg)
    partition = None
    if labels is not None:
        lab = _read_labels(labels)
        if len(lab) != data.n:
            raise io.InputError(f"{labels}: {len(lab)} labels for {data.n} rows")
        partition = partition_from_labels(lab)
    fits = fit_all_models(data, partition, cfg)
    rows = compare_models(fits)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in fits:
        io.write_coefficient_table(f.to_dict(), out / f"{f.label}.csv")
    (out / "comparison.json").write_text(json.dumps(io._clean(rows), indent=2) + "\n", encoding="utf-8")
    _print_comparison(rows)
    return EXIT_OK


def _print_comparison(rows):
    for r in rows:
        print(f"{r['rank']:>2}  {r['label']:<10} AIC={r['aic']:.3f}  logL={r['loglik']:.3f}  k={r['n_params']}")


def cmd_pipeline(cfg: RunConfig) -> int:
    result, _ = run_pipeline(load(cfg), cfg)
    print(f"bandwidth k={result.bandwidth} iterations={result.iterations} regimes={max(result.labels, default=0)}")
    _print_comparison(result.comparison)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_synth(cfg: RunConfig, layout: str, n: int, p: int, delta: float, noise: float, rho: float | None) -> int:
    base = [1.0] * (p + 1)
    shifted = [b + delta for b in base]
    if layout == "single":
        regions = [io.Region(base, halfplane=(0.0, 0.0, 1.0))]
    elif layout == "halfplane":
        regions = io.half_plane_regions(base, shifted)
    else:
        regions = io.quadrant_regions([base, shifted, [b - delta for b in base], [b + 2 * delta for b in base]])
    data, truth = io.generate_synthetic(io.SynthSpec(n, regions, noise_sd=noise, spatial_rho=rho, knn=cfg.knn, seed=cfg.seed))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = io.write_dataset(data, out / "synthetic.csv")
    (out / "synthetic.json").write_text(json.dumps(asdict(cols), indent=2) + "\n", encoding="utf-8")
    _write_labels(truth.labels, out / "planted.csv")
    print(f"wrote {data.n} rows, {truth.c} planted regime(s) to {out}")
    return EXIT_OK


def cmd_trace(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    path = io.trace_to_csv(io.read_trace(out / "trace.jsonl"), out / "trace.csv")
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = _config(args)
    try:
        if args.command == "bandwidth":
            return cmd_bandwidth(cfg)
        if args.command == "detect":
            return cmd_detect(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.labels)
        if args.command == "pipeline":
            return cmd_pipeline(cfg)
        if args.command == "synth":
            return cmd_synth(cfg, args.layout, args.n, args.p, args.delta, args.noise, args.rho)
        return cmd_trace(cfg)
    except (RegimeScanError, OSError, ValueError) as exc:
        print(f"regimescan: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
