"""Dataset ingestion, synthetic generators with planted regimes, and result I/O.

Synthetic data is drawn with numpy's ``PCG64`` bit generator
(``numpy.random.Generator(numpy.random.PCG64(seed))``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detector import OUTLIER, RegimePartition
from .errors import InputError, IoError, SynthError
from .local import Dataset
from .spatial import Coordinates

SCHEMA_VERSION = 1


@dataclass
class DatasetConfig:
    """Column roles for a CSV dataset."""

    response: str
    x: str
    y: str
    regressors: list[str]
    metric: str = "euclidean"
    intercept_name: str = "intercept"
    names: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "DatasetConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from exc
        try:
            return cls(**raw)
        except TypeError as exc:
            raise InputError(f"{path}: {exc}") from exc


def _parse(value: str, row: int, column: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise InputError(f"row {row}, column {column!r}: cannot parse {value!r} as a number") from None
    if not math.isfinite(out):
        raise InputError(f"row {row}, column {column!r}: non-finite value {value!r}")
    return out


def load_dataset(path, config: DatasetConfig) -> Dataset:
    """Read a CSV file into a validated ``Dataset`` with a prepended intercept.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            used = [config.response, config.x, config.y, *config.regressors]
            missing = [c for c in used if c not in header]
            if missing:
                raise InputError(f"{path}: missing column(s) {missing}")
            rows = list(reader)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    k = len(config.regressors) + 1
    if len(rows) < k + 2:
        raise InputError(f"{path}: {len(rows)} rows, need at least p+3 = {k + 2}")
    y = np.empty(len(rows))
    X = np.ones((len(rows), k))
    xy = np.empty((len(rows), 2))
    for r, rec in enumerate(rows, start=1):
        y[r - 1] = _parse(rec[config.response], r, config.response)
        xy[r - 1, 0] = _parse(rec[config.x], r, config.x)
        xy[r - 1, 1] = _parse(rec[config.y], r, config.y)
        for j, col in enumerate(config.regressors, start=1):
            X[r - 1, j] = _parse(rec[col], r, col)

    coords = Coordinates(xy, config.metric)
    dups = coords.duplicate_rows()
    if dups:
        shown = ", ".join(f"{a + 1}&{b + 1}" for a, b in dups[:10])
        raise InputError(f"{path}: duplicate coordinates at rows {shown}")
    names = [config.intercept_name] + [config.names.get(c, c) for c in config.regressors]
    return Dataset(y, X, coords, names)


def write_dataset(data: Dataset, path, response: str = "y", x: str = "x", y: str = "y_coord") -> DatasetConfig:
    """Write ``data`` as CSV (floats via ``repr``, so reloading is exact) and return its column roles."""
    path = Path(path)
    regressors = list(data.names[1:])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([response, x, y, *regressors])
            for i in range(data.n):
                vals = [data.y[i], *data.coords.points[i], *data.X[i, 1:]]
                w.writerow([repr(float(v)) for v in vals])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return DatasetConfig(response, x, y, regressors, data.coords.metric, data.names[0])


# -- synthetic data -----------------------------------------------------------


@dataclass
class Region:
    """A half-plane ``a*x + b*y <= c`` or a polygon, carrying its coefficients."""

    beta: list[float]
    halfplane: tuple[float, float, float] | None = None
    polygon: list[tuple[float, float]] | None = None

    def contains(self, pts: np.ndarray) -> np.ndarray:
        if self.halfplane is not None:
            a, b, c = self.halfplane
            return a * pts[:, 0] + b * pts[:, 1] <= c
        if self.polygon is not None:
            from matplotlib.path import Path as PolygonPath

            return PolygonPath(np.asarray(self.polygon, dtype=float)).contains_points(pts)
        raise SynthError("region needs a halfplane or a polygon")


@dataclass
class SynthSpec:
    n: int
    regions: list[Region]
    noise_sd: float = 1.0
    spatial_rho: float | None = None
    knn: int = 10
    seed: int = 0
    window: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)


def generate_synthetic(spec: SynthSpec) -> tuple[Dataset, RegimePartition]:
    """Draw a dataset whose coefficients are piecewise constant over ``spec.regions``.

    Points are uniform on the window and belong to the first region that
    contains them. With ``spatial_rho`` set, the response follows the SAR
    reduced form ``(I - rho M)^-1 (X beta + e)`` with a row-normalized k-NN ``M``.
    """
    if not spec.regions:
        raise SynthError("at least one region required")
    k = len(spec.regions[0].beta)
    if any(len(r.beta) != k for r in spec.regions):
        raise SynthError("all regions need coefficient vectors of equal length")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    x0, y0, x1, y1 = spec.window
    pts = np.column_stack([rng.uniform(x0, x1, spec.n), rng.uniform(y0, y1, spec.n)])
    labels = np.zeros(spec.n, dtype=int)
    for j, region in enumerate(spec.regions, start=1):
        inside = region.contains(pts) & (labels == 0)
        labels[inside] = j
    if np.any(labels == OUTLIER):
        raise SynthError("regions do not cover the sampling window")
    for j in range(1, len(spec.regions) + 1):
        if np.count_nonzero(labels == j) < k + 1:
            raise SynthError(f"region {j} holds fewer than p+2 = {k + 1} points")

    X = np.column_stack([np.ones(spec.n), rng.standard_normal((spec.n, k - 1))])
    B = np.array([spec.regions[j - 1].beta for j in labels], dtype=float)
    mean = np.einsum("ij,ij->i", X, B)
    eps = spec.noise_sd * rng.standard_normal(spec.n)
    coords = Coordinates(pts)
    if spec.spatial_rho is not None:
        from .models import build_knn_weights

        M = build_knn_weights(coords, spec.knn).M
        y = np.linalg.solve(np.eye(spec.n) - spec.spatial_rho * M, mean + eps)
    else:
        y = mean + eps
    names = ["intercept"] + [f"x{j}" for j in range(1, k)]
    return Dataset(y, X, coords, names), RegimePartition.from_labels(labels)


def half_plane_regions(beta_left, beta_right, split: float = 0.5) -> list[Region]:
    """Two regions split by the vertical line x = ``split``."""
    return [Region(list(beta_left), halfplane=(1.0, 0.0, split)), Region(list(beta_right), halfplane=(-1.0, 0.0, -split))]


def quadrant_regions(betas, split=(0.5, 0.5)) -> list[Region]:
    """Four rectangular regions meeting at ``split``; betas ordered SW, SE, NW, NE."""
    sx, sy = split
    big = 1e6
    boxes = [
        [(-big, -big), (sx, -big), (sx, sy), (-big, sy)],
        [(sx, -big), (big, -big), (big, sy), (sx, sy)],
        [(-big, sy), (sx, sy), (sx, big), (-big, big)],
        [(sx, sy), (big, sy), (big, big), (sx, big)],
    ]
    return [Region(list(b), polygon=box) for b, box in zip(betas, boxes)]


# -- results --------------------------------------------------------------------


@dataclass
class RunResult:
    config: dict
    labels: list[int]
    bandwidth: int | None
    iterations: int
    converged: bool
    fits: list[dict]
    comparison: list[dict]
    trace_file: str | None = None
    timing: dict = field(default_factory=dict)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_results(result: RunResult, path) -> list[Path]:
    """Write ``result.json`` plus per-fit coefficient CSVs and a timing file.

    ``path`` is the JSON file; siblings are ``<stem>_<fit>.csv`` and
    ``<stem>_timing.json``. Wall-clock timings live only in the timing file so
    the main document is reproducible byte for byte.
    """
    path = Path(path)
    doc = {"schema": SCHEMA_VERSION, **_clean(asdict(result))}
    timing = doc.pop("timing")
    written = []
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")
        written.append(path)
        tpath = path.with_name(f"{path.stem}_timing.json")
        tpath.write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
        written.append(tpath)
        for fit in result.fits:
            cpath = path.with_name(f"{path.stem}_{fit['label']}.csv")
            write_coefficient_table(fit, cpath)
            written.append(cpath)
    except OSError as exc:
        raise IoError(f"cannot write results to {path}: {exc}") from exc
    return written


def write_coefficient_table(fit: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient", "estimate", "se", "pvalue", "signif"])
        for row in fit["table"]:
            w.writerow(
                [
                    row["name"],
                    repr(row["estimate"]),
                    "" if row["se"] is None else repr(row["se"]),
                    "" if row["pvalue"] is None else repr(row["pvalue"]),
                    row["signif"],
                ]
            )
        w.writerow(["AIC", repr(fit["aic"]), "", "", ""])


def read_results(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    tpath = path.with_name(f"{path.stem}_timing.json")
    if tpath.exists():
        doc["timing"] = json.loads(tpath.read_text(encoding="utf-8"))
    return doc


def write_trace(records: list[dict], path) -> Path:
    """Per-iteration detector trace as JSON lines."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(_clean(rec)) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write trace {path}: {exc}") from exc
    return path


def read_trace(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise IoError(f"trace file {path} not found")
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def trace_to_csv(records: list[dict], path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "variation"])
            for rec in records:
                w.writerow([rec["iteration"], repr(float(rec["variation"]))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path
