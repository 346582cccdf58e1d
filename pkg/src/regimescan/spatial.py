"""Distances, distance-decay kernels and adaptive (nearest-neighbour) radii."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, InputError

EARTH_RADIUS_KM = 6371.0088

KERNEL_FAMILIES = ("gaussian", "exponential", "bisquare", "tricube")
METRICS = ("euclidean", "greatcircle")

Metric = Literal["euclidean", "greatcircle"]


def _canonical_metric(metric: str) -> str:
    m = metric.lower().replace("-", "").replace("_", "")
    if m not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return m


@dataclass(frozen=True)
class Coordinates:
    """Point locations plus the metric used to measure distances between them.

    For ``greatcircle`` the columns are (longitude, latitude) in degrees.
    """

    points: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InputError(f"coordinates must have shape (n, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
            raise InputError(f"non-finite coordinate at row(s) {bad.tolist()}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "metric", _canonical_metric(self.metric))

    def __len__(self):
        return self.points.shape[0]

    def duplicate_rows(self) -> list[tuple[int, int]]:
        """Pairs (first, later) of row indices sharing identical coordinates."""
        seen: dict[tuple[float, float], int] = {}
        dups = []
        for i, (a, b) in enumerate(self.points):
            key = (float(a), float(b))
            if key in seen:
                dups.append((seen[key], i))
            else:
                seen[key] = i
        return dups


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    bandwidth: int = 10
    truncate: bool = True

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if int(self.bandwidth) != self.bandwidth or self.bandwidth < 1:
            raise ConfigError(f"bandwidth must be a positive integer, got {self.bandwidth}")

    def check(self, n: int, k: int):
        """Validate against a dataset with n rows and k = p+1 coefficients."""
        if not (k + 1 <= self.bandwidth <= n - 1):
            raise ConfigError(
                f"bandwidth {self.bandwidth} outside [{k + 1}, {n - 1}] for n={n}, p+1={k}"
            )


def pairwise_distances(coords: Coordinates) -> np.ndarray:
    """Dense n x n distance matrix with an exact zero diagonal."""
    pts = coords.points
    if pts.shape[0] < 2:
        raise InputError("need at least two points")
    if coords.metric == "euclidean":
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    else:
        lon = np.radians(pts[:, 0])
        lat = np.radians(pts[:, 1])
        dlat = lat[:, None] - lat[None, :]
        dlon = lon[:, None] - lon[None, :]
        h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
        d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def adaptive_radius(d: np.ndarray, i: int, k: int) -> float:
    """Distance from point ``i`` to its ``k``-th nearest neighbour (self excluded)."""
    n = d.shape[0]
    if not (1 <= k <= n - 1):
        raise ConfigError(f"neighbour count k={k} outside [1, {n - 1}]")
    row = np.delete(d[i], i)
    return float(np.partition(row, k - 1)[k - 1])


def adaptive_radii(d: np.ndarray, k: int) -> np.ndarray:
    """Vector of ``adaptive_radius(d, i, k)`` for every i."""
    n = d.shape[0]
    if not (1 <= k <= n - 1):
        raise ConfigError(f"neighbour count k={k} outside [1, {n - 1}]")
    # self sits at sorted position 0 (distance 0, duplicates are rejected upstream)
    return np.partition(d, k, axis=1)[:, k].copy()


def kernel_weight(dist, radius, family: str = "gaussian", truncate: bool = True):
    """Kernel weight of a point at ``dist`` from a target whose window is ``radius``.

    Works elementwise on arrays. By default every family is cut to zero beyond
    the window edge (``dist / radius > 1``); ``truncate=False`` keeps the
    gaussian and exponential tails, the convention of common GWR software.
    """
    dist = np.asarray(dist, dtype=float)
    radius = np.asarray(radius, dtype=float)
    if np.any(dist < 0):
        raise InputError("distances must be nonnegative")
    if np.any(radius <= 0):
        raise InputError("kernel radius must be positive")
    u = dist / radius
    if family == "gaussian":
        w = np.exp(-0.5 * u * u)
    elif family == "exponential":
        w = np.exp(-u)
    elif family == "bisquare":
        w = (1.0 - u * u) ** 2
    elif family == "tricube":
        w = (1.0 - u**3) ** 3
    else:
        raise ConfigError(f"unknown kernel family {family!r}")
    if truncate:
        w = np.where(u > 1.0, 0.0, w)
    if family in ("bisquare", "tricube"):
        w = np.where(u >= 1.0, 0.0, w)
    return w if w.ndim else float(w)
