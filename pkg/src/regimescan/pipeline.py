"""End-to-end two-step runs: bandwidth, regime detection, then spatial models.

The CLI is a thin shell over the functions here, so every command can be
reproduced from Python with identical output.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as io
from .detector import DetectorConfig, Detection, RegimePartition, detect_regimes
from .errors import ConvergenceWarning
from .local import BandwidthSearch, Dataset, select_bandwidth
from .models import MODEL_KINDS, ModelFit, ModelSpec, build_knn_weights, compare_models, fit_model
from .spatial import KernelSpec

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    data: str | None = None
    columns: str | None = None
    kernel: str = "gaussian"
    bandwidth: int | None = None
    full_grid: bool = False
    tau: float = 0.001
    alpha: float | None = None
    eta: float = 0.5
    omega: float = 0.0001
    threshold: float = 0.5
    max_iter: int = 500
    models: list[str] = field(default_factory=lambda: list(MODEL_KINDS))
    knn: int = 10
    metric: str | None = None
    regime_variance: bool = False
    out: str = "out"
    threads: int | None = None
    seed: int = 0
    trace: bool = False

    def detector(self, data: Dataset, bandwidth: int) -> DetectorConfig:
        return DetectorConfig(
            tau=self.tau,
            alpha=self.alpha,
            eta=self.eta,
            omega=self.omega,
            max_iterations=self.max_iter,
            kernel=KernelSpec(self.kernel, bandwidth),
            cluster_threshold=self.threshold,
            threads=self.threads,
        )

    def echo(self) -> dict:
        """Configuration as recorded in results (thread count and output dir excluded)."""
        d = asdict(self)
        d.pop("threads")
        d.pop("out")
        return d


def load(cfg: RunConfig) -> Dataset:
    if cfg.data is None or cfg.columns is None:
        raise io.InputError("a dataset path and a column-role config are required")
    columns = io.DatasetConfig.from_file(cfg.columns)
    if cfg.metric is not None:
        columns.metric = cfg.metric
    return io.load_dataset(cfg.data, columns)


def run_bandwidth(data: Dataset, cfg: RunConfig) -> BandwidthSearch:
    grid = "full" if cfg.full_grid else None
    if cfg.bandwidth is not None:
        grid = [cfg.bandwidth]
    return select_bandwidth(data, cfg.kernel, grid=grid, threads=cfg.threads)


def run_detect(data: Dataset, cfg: RunConfig) -> Detection:
    k = cfg.bandwidth if cfg.bandwidth is not None else run_bandwidth(data, cfg).chosen
    return detect_regimes(data, cfg.detector(data, k), trace=True)


def fit_all_models(data: Dataset, partition: RegimePartition | None, cfg: RunConfig) -> list[ModelFit]:
    """Global and (given a partition) regime fits for every requested kind.

    Observations flagged as outliers are dropped from the global fits too, so
    that every fit in the comparison uses the same sample.
    """
    M = build_knn_weights(data.coords, cfg.knn)
    gdata, gM = data, M
    if partition is not None and partition.outliers.size:
        kept = partition.kept
        gdata, gM = data.subset(kept), M.subset(kept)
    fits = []
    for kind in cfg.models:
        fits.append(fit_model(gdata, gM, ModelSpec(kind)))
    if partition is not None:
        for kind in cfg.models:
            fits.append(fit_model(data, M, ModelSpec(kind, partition, cfg.regime_variance)))
    return fits


def run_pipeline(data: Dataset, cfg: RunConfig, write: bool = True) -> tuple[io.RunResult, Detection]:
    """Bandwidth -> detection -> model fits -> comparison, optionally written to ``cfg.out``."""
    timing = {}
    t0 = time.perf_counter()
    if cfg.bandwidth is None:
        k = run_bandwidth(data, cfg).chosen
    else:
        k = cfg.bandwidth
    timing["bandwidth_seconds"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        det = detect_regimes(data, cfg.detector(data, k), trace=cfg.trace)
    timing["detect_seconds"] = time.perf_counter() - t1
    if not det.converged:
        log.warning("detector stopped at max_iterations=%d without converging", cfg.max_iter)

    t2 = time.perf_counter()
    fits = fit_all_models(data, det.partition, cfg)
    timing["models_seconds"] = time.perf_counter() - t2
    timing["iterations"] = det.state.iteration
    timing["n"] = data.n
    timing["parameters"] = data.k

    out = Path(cfg.out)
    trace_file = None
    if cfg.trace:
        trace_file = "trace.jsonl"
    result = io.RunResult(
        config=cfg.echo(),
        labels=det.partition.labels.tolist(),
        bandwidth=k,
        iterations=det.state.iteration,
        converged=det.converged,
        fits=[f.to_dict() for f in fits],
        comparison=compare_models(fits),
        trace_file=trace_file,
        timing=timing,
    )
    if write:
        io.write_results(result, out / "result.json")
        if cfg.trace:
            io.write_trace(det.trace, out / "trace.jsonl")
    return result, det


def partition_from_labels(labels) -> RegimePartition:
    return RegimePartition.from_labels(np.asarray(labels, dtype=int))
