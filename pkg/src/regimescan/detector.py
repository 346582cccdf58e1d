"""Iterative adaptive-weights detection of spatial regimes.

Every iteration refits the n local regressions with the current smoothed
weights, compares all pairs of local coefficient vectors with a Wald
statistic, and shrinks the weight between points whose coefficients differ.
Weights converge towards 0/1 values; the connected components of the final
weight graph are the regimes.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._parallel import map_chunks, resolve_threads
from .errors import ConfigError, ConvergenceWarning, DegeneratePoolError
from .local import RIDGE_SCALE, Dataset, LocalFit, LocalFits, fit_all, initial_weight_matrix, select_bandwidth
from .spatial import KernelSpec, kernel_weight

log = logging.getLogger(__name__)

OUTLIER = 0


@dataclass
class DetectorConfig:
    tau: float = 0.001
    eta: float = 0.5
    omega: float = 0.0001
    max_iterations: int = 500
    kernel: KernelSpec | None = None
    cluster_threshold: float = 0.5
    threads: int | None = None
    alpha: float | None = None  # overrides tau: tau = 1 / chi2_{p+1} upper-alpha quantile

    def __post_init__(self):
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not 0 < self.eta < 1:
            raise ConfigError("eta must lie in (0, 1)")
        if not self.omega > 0:
            raise ConfigError("omega must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not 0 < self.cluster_threshold < 1:
            raise ConfigError("cluster_threshold must lie in (0, 1)")


@dataclass
class WeightState:
    w_bar: np.ndarray
    w_raw: np.ndarray
    iteration: int = 0
    variation_history: list[float] = field(default_factory=list)


@dataclass
class RegimePartition:
    """Regime labels 1..c per observation; ``OUTLIER`` (0) marks excluded points."""

    labels: np.ndarray
    c: int
    sizes: list[int]

    @classmethod
    def from_labels(cls, labels) -> "RegimePartition":
        labels = np.asarray(labels, dtype=int)
        c = int(labels.max(initial=0))
        sizes = [int(np.count_nonzero(labels == j)) for j in range(1, c + 1)]
        return cls(labels, c, sizes)

    @property
    def outliers(self) -> np.ndarray:
        return np.flatnonzero(self.labels == OUTLIER)

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.labels != OUTLIER)


@dataclass
class Detection:
    partition: RegimePartition
    state: WeightState
    fits: LocalFits
    converged: bool
    bandwidth: int
    trace: list[dict] = field(default_factory=list)


def chi_kernel(chi, tau: float):
    """exp(-0.5 (chi * tau)^2), elementwise."""
    chi = np.asarray(chi, dtype=float)
    out = np.exp(-0.5 * (chi * tau) ** 2)
    return out if out.ndim else float(out)


def tau_from_alpha(alpha: float, dof: int) -> float:
    """Reciprocal of the upper-``alpha`` quantile of a chi-square with ``dof`` d.o.f."""
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if dof < 1:
        raise ConfigError("dof must be at least 1")
    return float(1.0 / stats.chi2.isf(alpha, dof))


def _wald_pairs(beta, cov, mass, flagged, I, J) -> np.ndarray:
    delta = beta[I] - beta[J]
    mi = mass[I][:, None, None]
    mj = mass[J][:, None, None]
    pooled = (mi * cov[I] + mj * cov[J]) / (mi + mj)
    weak = flagged[I] | flagged[J]
    if np.any(weak):
        k = pooled.shape[-1]
        scale = RIDGE_SCALE * np.trace(pooled[weak], axis1=1, axis2=2) / k
        pooled[weak] += np.maximum(scale, np.finfo(float).tiny)[:, None, None] * np.eye(k)
    try:
        sol = np.linalg.solve(pooled, delta[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise DegeneratePoolError("pooled covariance singular after ridge") from exc
    chi = np.einsum("ij,ij->i", delta, sol)
    if not np.all(np.isfinite(chi)):
        raise DegeneratePoolError("non-finite Wald statistic")
    return np.maximum(chi, 0.0)


def _flagged(fits: LocalFits) -> np.ndarray:
    return fits.ridged | ~(fits.sigma2 > 0)


def wald_statistic(fit_i: LocalFit, fit_j: LocalFit) -> float:
    """Wald distance between two local coefficient vectors under their pooled covariance."""
    beta = np.stack([fit_i.beta, fit_j.beta])
    cov = np.stack([fit_i.cov, fit_j.cov]).astype(float)
    mass = np.array([fit_i.effective_mass, fit_j.effective_mass])
    flagged = np.array([fit_i.ridged or not fit_i.sigma2 > 0, fit_j.ridged or not fit_j.sigma2 > 0])
    return float(_wald_pairs(beta, cov, mass, flagged, np.array([0]), np.array([1]))[0])


def wald_matrix(fits: LocalFits, mask: np.ndarray | None = None, threads: int = 1) -> np.ndarray:
    """Symmetric matrix of pairwise Wald statistics.

    Only pairs with ``mask[i, j] or mask[j, i]`` are evaluated; the rest stay 0.
    """
    n = len(fits)
    I, J = np.triu_indices(n, 1)
    if mask is not None:
        keep = mask[I, J] | mask[J, I]
        I, J = I[keep], J[keep]
    flagged = _flagged(fits)

    def work(s):
        return _wald_pairs(fits.beta, fits.cov, fits.mass, flagged, I[s], J[s])

    chi = np.zeros((n, n))
    if I.size:
        vals = np.concatenate(map_chunks(work, I.size, threads))
        chi[I, J] = vals
        chi[J, I] = vals
    return chi


def extract_regimes(w_bar: np.ndarray, threshold: float, min_size: int) -> RegimePartition:
    """Connected components of the mutually-above-threshold weight graph.

    Components smaller than ``min_size`` are labelled as outliers. Regimes are
    numbered by their smallest member index.
    """
    adj = (w_bar > threshold) & (w_bar.T > threshold)
    _, comp = connected_components(csr_matrix(adj), directed=False)
    labels = np.zeros(w_bar.shape[0], dtype=int)
    nxt = 1
    order = {}
    for i, cidx in enumerate(comp):
        if cidx not in order:
            order[cidx] = i
    for cidx in sorted(order, key=order.get):
        members = comp == cidx
        if members.sum() >= min_size:
            labels[members] = nxt
            nxt += 1
    return RegimePartition.from_labels(labels)


def detect_regimes(data: Dataset, config: DetectorConfig | None = None, trace: bool = False) -> Detection:
    """Run the iterative weights-smoothing procedure and extract regimes.

    If ``config.kernel`` is ``None`` the bandwidth is chosen by AICc with a
    gaussian kernel first.
    """
    config = config or DetectorConfig()
    threads = resolve_threads(config.threads)
    spec = config.kernel
    if spec is None:
        k = select_bandwidth(data, "gaussian", threads=threads).chosen
        spec = KernelSpec("gaussian", k)
        log.info("selected bandwidth k=%d", k)
    family = spec.family
    tau = config.tau if config.alpha is None else tau_from_alpha(config.alpha, data.k)
    D = data.distances
    min_size = data.k + 1

    w_bar, h = initial_weight_matrix(data, KernelSpec(family, spec.bandwidth, truncate=True))
    state = WeightState(w_bar=w_bar, w_raw=w_bar.copy(), iteration=0)
    records = []
    off = ~np.eye(data.n, dtype=bool)
    converged = False
    fits = None
    t0 = time.perf_counter()
    for it in range(1, config.max_iterations + 1):
        fits = fit_all(data, state.w_bar, threads=threads)
        dist_w = kernel_weight(D / it, h[:, None], family, truncate=True)
        chi = wald_matrix(fits, dist_w > 0, threads=threads)
        w_raw = dist_w * np.exp(-0.5 * (chi * tau) ** 2)
        np.fill_diagonal(w_raw, 1.0)
        dw = float(np.max(np.abs(state.w_bar - w_raw)[off]))
        state.w_bar = (1.0 - config.eta) * state.w_bar + config.eta * w_raw
        state.w_raw = w_raw
        state.iteration = it
        state.variation_history.append(dw)
        if trace:
            provisional = extract_regimes(state.w_bar, config.cluster_threshold, min_size)
            records.append(
                {
                    "iteration": it,
                    "variation": dw,
                    "clusters": provisional.c,
                    "seconds": time.perf_counter() - t0,
                }
            )
        if dw < config.omega:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"weights did not stabilize within {config.max_iterations} iterations "
            f"(last variation {state.variation_history[-1]:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    partition = extract_regimes(state.w_bar, config.cluster_threshold, min_size)
    return Detection(partition, state, fits, converged, spec.bandwidth, records)
