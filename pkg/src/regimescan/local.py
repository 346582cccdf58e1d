"""Locally weighted least squares, the GWR hat matrix and AICc bandwidth choice."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._parallel import map_chunks
from .errors import (
    BandwidthSearchError,
    ConfigError,
    DegenerateNeighborhoodError,
    InputError,
    InsufficientSupportError,
    OversmoothError,
)
from .spatial import Coordinates, KernelSpec, adaptive_radii, kernel_weight, pairwise_distances

RCOND_MIN = 1e-12
RIDGE_SCALE = 1e-8


@dataclass
class Dataset:
    """Response, design matrix (leading column of ones) and locations.

    Parameters
    ----------
    y : (n,) array
    X : (n, p+1) array whose first column is the intercept
    coords : Coordinates
    names : column labels of X, ``names[0]`` is the intercept label
    """

    y: np.ndarray
    X: np.ndarray
    coords: Coordinates
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float)
        if not isinstance(self.coords, Coordinates):
            self.coords = Coordinates(np.asarray(self.coords, dtype=float))
        n = self.y.shape[0]
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise InputError(f"X must be ({n}, p+1), got {self.X.shape}")
        if len(self.coords) != n:
            raise InputError("coords and y differ in length")
        if not np.all(self.X[:, 0] == 1.0):
            raise InputError("first column of X must be the intercept (all ones)")
        if n <= self.k:
            raise InputError(f"need n > p+1, got n={n}, p+1={self.k}")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise InputError("y and X must be finite")
        if np.linalg.matrix_rank(self.X) < self.k:
            raise InputError("X is not of full column rank")
        if not self.names:
            self.names = ["intercept"] + [f"x{j}" for j in range(1, self.k)]
        if len(self.names) != self.k:
            raise InputError("names must label every column of X")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        """Number of coefficients, p + 1."""
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1] - 1

    @cached_property
    def distances(self) -> np.ndarray:
        return pairwise_distances(self.coords)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.y[rows],
            self.X[rows],
            Coordinates(self.coords.points[rows], self.coords.metric),
            list(self.names),
        )


@dataclass
class LocalFit:
    beta: np.ndarray
    sigma2: float
    cov: np.ndarray
    effective_mass: float
    ridged: bool = False


@dataclass
class LocalFits:
    """All n local fits for one weight matrix, stored as stacked arrays."""

    beta: np.ndarray  # (n, k)
    sigma2: np.ndarray  # (n,)
    cov: np.ndarray  # (n, k, k)
    mass: np.ndarray  # (n,)
    ridged: np.ndarray  # (n,) bool

    def __len__(self):
        return self.beta.shape[0]

    def __getitem__(self, i) -> LocalFit:
        return LocalFit(self.beta[i], float(self.sigma2[i]), self.cov[i], float(self.mass[i]), bool(self.ridged[i]))


def _regularize(A: np.ndarray, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Ridge any ill-conditioned matrices in a (m, k, k) symmetric stack."""
    eig = np.linalg.eigvalsh(A)
    top = eig[:, -1]
    rcond = np.where(top > 0, np.clip(eig[:, 0], 0.0, None) / np.where(top > 0, top, 1.0), 0.0)
    ridged = rcond < RCOND_MIN
    if np.any(ridged):
        A = A.copy()
        k = A.shape[-1]
        scale = RIDGE_SCALE * np.trace(A[ridged], axis1=1, axis2=2) / k
        if np.any(scale <= 0):
            bad = np.flatnonzero(ridged)[np.flatnonzero(scale <= 0)[0]]
            raise DegenerateNeighborhoodError(offset + bad)
        A[ridged] += scale[:, None, None] * np.eye(k)
        eig2 = np.linalg.eigvalsh(A[ridged])
        still = eig2[:, 0] / eig2[:, -1] < RCOND_MIN
        if np.any(still):
            bad = np.flatnonzero(ridged)[np.flatnonzero(still)[0]]
            raise DegenerateNeighborhoodError(offset + bad)
    return A, ridged


def _fit_rows(X, y, W, offset=0, hat=False):
    n, k = X.shape
    npos = np.count_nonzero(W > 0, axis=1)
    if np.any(npos < k):
        i = int(np.flatnonzero(npos < k)[0])
        raise InsufficientSupportError(
            f"target {offset + i}: {npos[i]} positive weights, need at least {k}"
        )
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, k * k)
    A = (W @ XX).reshape(-1, k, k)
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    A, ridged = _regularize(A, offset)
    b = W @ (X * y[:, None])
    beta = np.linalg.solve(A, b[:, :, None])[:, :, 0]
    resid = y[None, :] - beta @ X.T
    mass = W.sum(axis=1)
    wrss = np.einsum("ij,ij->i", W, resid * resid)
    dof = mass - k
    sigma2 = wrss / np.where(dof > 0, dof, mass)
    B = ((W * W) @ XX).reshape(-1, k, k)
    G = np.linalg.solve(A, B)
    cov = np.linalg.solve(A, np.transpose(G, (0, 2, 1)))
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1))) * sigma2[:, None, None]
    out = dict(beta=beta, sigma2=sigma2, cov=cov, mass=mass, ridged=ridged)
    if hat:
        rows = np.arange(W.shape[0]) + offset
        v = np.linalg.solve(A, X[rows][:, :, None])[:, :, 0]
        out["hat"] = (v @ X.T) * W
    return out


def fit_all(data: Dataset, W: np.ndarray, threads: int = 1, hat: bool = False):
    """Fit every local regression, row i of ``W`` weighting target i.

    Returns ``LocalFits`` and, with ``hat=True``, also the stacked hat matrix.
    """
    X, y = data.X, data.y

    def work(s):
        return _fit_rows(X, y, W[s], offset=s.start, hat=hat)

    parts = map_chunks(work, W.shape[0], threads, size=256)
    cat = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    fits = LocalFits(cat["beta"], cat["sigma2"], cat["cov"], cat["mass"], cat["ridged"])
    if hat:
        return fits, cat["hat"]
    return fits


def lwls_fit(data: Dataset, weights, target: int) -> LocalFit:
    """Weighted least squares fit for a single target point."""
    w = np.asarray(weights, dtype=float).reshape(1, -1)
    if w.shape[1] != data.n:
        raise InputError("weights must have one entry per observation")
    if np.any(w < 0):
        raise InputError("weights must be nonnegative")
    try:
        out = _fit_rows(data.X, data.y, w, offset=target)
    except DegenerateNeighborhoodError as exc:
        raise DegenerateNeighborhoodError(target) from exc
    except InsufficientSupportError as exc:
        raise InsufficientSupportError(f"target {target}: {exc}") from None
    return LocalFits(**out)[0]


def initial_weight_matrix(data: Dataset, spec: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Kernel weights for every target at once, plus the per-target radii."""
    spec.check(data.n, data.k)
    d = data.distances
    h = adaptive_radii(d, spec.bandwidth)
    W = kernel_weight(d, h[:, None], spec.family, spec.truncate)
    np.fill_diagonal(W, 1.0)
    return W, h


def initial_weights(data: Dataset, spec: KernelSpec, target: int) -> np.ndarray:
    W, _ = initial_weight_matrix(data, spec)
    return W[target]


def gwr_hat_matrix(data: Dataset, spec: KernelSpec, threads: int = 1) -> np.ndarray:
    """Stacked hat matrix: row i maps y to the fitted value of local fit i."""
    W, _ = initial_weight_matrix(data, spec)
    _, S = fit_all(data, W, threads=threads, hat=True)
    return S


def effective_parameters(S: np.ndarray) -> float:
    """2 tr(S) - tr(S'S)."""
    return float(2.0 * np.trace(S) - np.einsum("ij,ij->", S, S))


def aicc_value(rss: float, trace_s: float, n: int) -> float:
    if trace_s >= n - 2:
        raise OversmoothError(f"tr(S)={trace_s:.3f} >= n-2={n - 2}")
    sigma = math.sqrt(rss / n)
    return 2 * n * math.log(sigma) + n * math.log(2 * math.pi) + n * (n + trace_s) / (n - 2 - trace_s)


def aic_c(data: Dataset, spec: KernelSpec, threads: int = 1) -> float:
    S = gwr_hat_matrix(data, spec, threads)
    resid = data.y - S @ data.y
    return aicc_value(float(resid @ resid), float(np.trace(S)), data.n)


@dataclass
class BandwidthSearch:
    candidates: list[int]
    scores: list[float]
    chosen: int

    def curve(self) -> list[tuple[int, float]]:
        return list(zip(self.candidates, self.scores))


def _coarse_then_refine(score, lo: int, hi: int, points: int = 30, keep: int = 3) -> None:
    # AICc in k is often flat with several local minima; a unimodal search can stall.
    step = max(1, (hi - lo) // points)
    coarse = sorted(set(range(lo, hi + 1, step)) | {hi})
    best = sorted(coarse, key=lambda k: (score(k), k))[:keep]
    for b in best:
        for k in range(max(lo, b - step), min(hi, b + step) + 1):
            score(k)


def select_bandwidth(
    data: Dataset, family: str = "gaussian", grid=None, threads: int = 1, truncate: bool = False
) -> BandwidthSearch:
    """Choose the neighbour count minimizing AICc.

    Kernels are untruncated by default here (``truncate=False``), matching the
    usual GWR bandwidth-selection convention; the regime detector itself
    truncates its starting weights at the window edge.

    ``grid=None`` scores about 30 evenly spaced candidates, then every integer
    within one spacing of the three best. Pass ``grid="full"`` or an explicit
    list for an exhaustive evaluation.
    """
    lo, hi = data.k + 1, data.n - 1
    cache: dict[int, float] = {}

    def score(k: int) -> float:
        if k not in cache:
            try:
                cache[k] = aic_c(data, KernelSpec(family, int(k), truncate), threads)
            except OversmoothError:
                cache[k] = math.inf
        return cache[k]

    if grid is None:
        _coarse_then_refine(score, lo, hi)
    else:
        ks = list(range(lo, hi + 1)) if grid == "full" else sorted({int(k) for k in grid})
        if not ks:
            raise ConfigError("bandwidth grid is empty")
        for k in ks:
            if not (lo <= k <= hi):
                raise ConfigError(f"grid value {k} outside [{lo}, {hi}]")
            score(k)
    candidates = sorted(cache)
    scores = [cache[k] for k in candidates]
    if all(math.isinf(s) for s in scores):
        raise BandwidthSearchError("every bandwidth candidate oversmooths (tr(S) >= n-2)")
    chosen = min(candidates, key=lambda k: (cache[k], k))
    return BandwidthSearch(candidates, scores, chosen)
