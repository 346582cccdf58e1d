"""Maximum likelihood spatial regression with optional endogenous regimes.

Supported kinds are ``ols``, ``sar`` (spatial lag), ``sem`` (spatial error),
``sarar`` (lag plus autoregressive error) and ``sdm`` (spatial Durbin: lag plus
spatially lagged covariates, intercept excluded). Given a ``RegimePartition``
the coefficients become regime-specific through a block design while the
spatial parameters stay common.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize, stats

from .detector import RegimePartition
from .errors import BoundaryWarning, ComparisonError, ConfigError, DesignError, InputError, SEUnavailableWarning
from .local import Dataset
from .spatial import Coordinates, pairwise_distances

MODEL_KINDS = ("ols", "sar", "sem", "sarar", "sdm")
BOUND = 0.999
TOL = 1e-8

_LAG_KINDS = {"sar", "sarar", "sdm"}
_ERR_KINDS = {"sem", "sarar"}


@dataclass
class SpatialWeights:
    """Row-normalized spatial weight matrix ``M``."""

    M: np.ndarray
    k: int

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.M)

    def logdet(self, rho: float) -> float:
        """ln|I - rho M| from the (possibly complex) eigenvalues of M."""
        if rho == 0.0:
            return 0.0
        return float(np.sum(np.log(1.0 - rho * self.eigenvalues)).real)

    def subset(self, keep) -> "SpatialWeights":
        """Restrict to the rows/columns in ``keep`` and re-normalize each row."""
        keep = np.asarray(keep)
        M = self.M[np.ix_(keep, keep)]
        sums = M.sum(axis=1)
        if np.any(sums <= 0):
            bad = keep[np.flatnonzero(sums <= 0)[0]]
            raise DesignError(f"observation {bad} loses all of its neighbours after dropping outliers")
        return SpatialWeights(M / sums[:, None], self.k)


def build_knn_weights(coords: Coordinates, k: int = 10) -> SpatialWeights:
    """Row-normalized k-nearest-neighbour matrix; ties go to the smaller index."""
    n = len(coords)
    if not 1 <= k < n:
        raise ConfigError(f"k={k} must lie in [1, n-1={n - 1}]")
    dups = coords.duplicate_rows()
    if dups:
        raise InputError(f"duplicate coordinates at rows {dups[:5]}")
    d = pairwise_distances(coords)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    M = np.zeros((n, n))
    M[np.arange(n)[:, None], nbrs] = 1.0 / k
    return SpatialWeights(M, k)


@dataclass
class RegimeDesign:
    X_block: np.ndarray
    map: np.ndarray
    regime: np.ndarray
    names: list[str]
    c: int


def regime_design(data: Dataset, partition: RegimePartition) -> RegimeDesign:
    """Block design with one coefficient block per regime; outlier rows dropped."""
    labels = np.asarray(partition.labels)
    if labels.shape[0] != data.n:
        raise DesignError("partition does not label every observation")
    kept = np.flatnonzero(labels != 0)
    lab = labels[kept]
    regimes = sorted(set(lab.tolist()))
    if not regimes:
        raise DesignError("partition has no regimes")
    k = data.k
    for j in regimes:
        size = int(np.count_nonzero(lab == j))
        if size < k + 1:
            raise DesignError(f"regime {j} has {size} observations, need at least p+2 = {k + 1}")
    X = data.X[kept]
    c = len(regimes)
    if c == 1:
        return RegimeDesign(X.copy(), kept, np.ones(kept.size, dtype=int), list(data.names), 1)
    blocks = np.zeros((kept.size, k * c))
    names = []
    for b, j in enumerate(regimes):
        rows = lab == j
        blocks[rows, b * k : (b + 1) * k] = X[rows]
        names += [f"{nm}{b + 1}" for nm in data.names]
    regime = np.searchsorted(regimes, lab) + 1
    return RegimeDesign(blocks, kept, regime, names, c)


@dataclass
class ModelSpec:
    kind: str = "ols"
    regimes: RegimePartition | None = None
    regime_variance: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")

    @property
    def label(self) -> str:
        return f"esr-{self.kind}" if self.regimes is not None else self.kind


@dataclass
class ModelFit:
    kind: str
    label: str
    names: list[str]
    beta: np.ndarray
    theta: np.ndarray
    rho: float | None
    lam: float | None
    sigma2: np.ndarray
    loglik: float
    aic: float
    se: np.ndarray
    pvalues: np.ndarray
    n: int
    n_params: int
    boundary: bool = False
    se_available: bool = True
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.beta, self.theta])

    def table(self) -> list[dict]:
        """Coefficient rows, regime-suffixed names grouped by variable, then rho/lambda."""
        rows = []
        est = self.coefficients
        q = est.size
        for i in _display_order(self.names):
            rows.append(_row(self.names[i], est[i], self.se[i], self.pvalues[i]))
        extra = q
        for name, value in (("rho", self.rho), ("lambda", self.lam)):
            if value is not None:
                rows.append(_row(name, value, self.se[extra], self.pvalues[extra]))
                extra += 1
        return rows

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "kind": self.kind,
            "n": self.n,
            "n_params": self.n_params,
            "loglik": self.loglik,
            "aic": self.aic,
            "rho": self.rho,
            "lambda": self.lam,
            "sigma2": self.sigma2.tolist(),
            "boundary": self.boundary,
            "se_available": self.se_available,
            "table": self.table(),
        }


def _row(name, est, se, p):
    se = float(se) if np.isfinite(se) else None
    p = float(p) if np.isfinite(p) else None
    return {"name": name, "estimate": float(est), "se": se, "pvalue": p, "signif": significance_stars(p)}


def _display_order(names: list[str]) -> list[int]:
    """Indices that interleave regime blocks: intercept1, intercept2, x1, x2, ..."""
    import re

    keyed = []
    for i, nm in enumerate(names):
        m = re.fullmatch(r"(M_)?(.*?)(\d+)?", nm)
        lagged, base, reg = m.group(1) is not None, m.group(2), m.group(3)
        keyed.append((lagged, i if reg is None else None, base, int(reg or 0), i))
    first_seen: dict[tuple, int] = {}
    for lagged, _, base, _, i in keyed:
        first_seen.setdefault((lagged, base), i)
    return [t[-1] for t in sorted(keyed, key=lambda t: (t[0], first_seen[(t[0], t[2])], t[3]))]


def significance_stars(p) -> str:
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "."
    return ""


# -- likelihood machinery -------------------------------------------------------------


class _Problem:
    """Precomputed pieces for one (y, Z, M, variance-groups) estimation problem."""

    def __init__(self, y, Z, W: SpatialWeights, kind: str, groups=None):
        self.y, self.Z, self.W, self.kind = y, Z, W, kind
        self.n = y.shape[0]
        M = W.M
        self.My = M @ y
        self.MZ = M @ Z
        self.MMy = M @ self.My
        self.groups = groups
        if groups is not None:
            self.group_ids = [np.flatnonzero(groups == g) for g in np.unique(groups)]
        else:
            self.group_ids = [np.arange(self.n)]
        self.lag = kind in _LAG_KINDS
        self.err = kind in _ERR_KINDS

    def filtered(self, rho, lam):
        ya = self.y - rho * self.My
        if lam == 0.0:
            return ya, self.Z
        ys = ya - lam * (self.My - rho * self.MMy)
        Zs = self.Z - lam * self.MZ
        return ys, Zs

    def _gls(self, ys, Zs):
        beta = np.linalg.lstsq(Zs, ys, rcond=None)[0]
        e = ys - Zs @ beta
        if len(self.group_ids) == 1:
            return beta, e, np.array([e @ e / self.n])
        sig = np.array([e[g] @ e[g] / g.size for g in self.group_ids])
        for _ in range(200):
            w = np.empty(self.n)
            for g, s in zip(self.group_ids, sig):
                w[g] = 1.0 / math.sqrt(s)
            beta = np.linalg.lstsq(Zs * w[:, None], ys * w, rcond=None)[0]
            e = ys - Zs @ beta
            new = np.array([e[g] @ e[g] / g.size for g in self.group_ids])
            if np.max(np.abs(new - sig) / sig) < 1e-12:
                sig = new
                break
            sig = new
        return beta, e, sig

    def profile(self, rho, lam):
        """Concentrated log-likelihood and the maximizing beta, sigma^2."""
        ys, Zs = self.filtered(rho, lam)
        beta, e, sig = self._gls(ys, Zs)
        ll = self.W.logdet(rho) + self.W.logdet(lam)
        for g, s in zip(self.group_ids, sig):
            ll -= 0.5 * g.size * (math.log(2 * math.pi * s) + 1.0)
        return ll, beta, sig

    def full(self, beta, rho, lam, sig) -> float:
        """Gaussian log-likelihood at arbitrary parameter values."""
        if abs(rho) >= 1 or abs(lam) >= 1 or np.any(np.asarray(sig) <= 0):
            return -np.inf
        ys, Zs = self.filtered(rho, lam)
        e = ys - Zs @ beta
        ll = self.W.logdet(rho) + self.W.logdet(lam)
        for g, s in zip(self.group_ids, sig):
            ll -= 0.5 * g.size * math.log(2 * math.pi * s) + 0.5 * (e[g] @ e[g]) / s
        return ll

    def pack(self, beta, rho, lam, sig):
        parts = [beta]
        if self.lag:
            parts.append([rho])
        if self.err:
            parts.append([lam])
        parts.append(sig)
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def unpack(self, theta):
        q = self.Z.shape[1]
        beta = theta[:q]
        i = q
        rho = lam = 0.0
        if self.lag:
            rho = theta[i]
            i += 1
        if self.err:
            lam = theta[i]
            i += 1
        return beta, rho, lam, theta[i:]

    def full_vec(self, theta) -> float:
        return self.full(*self.unpack(theta))


def _maximize_scalar(fn) -> float:
    res = optimize.minimize_scalar(
        lambda t: -fn(t), bounds=(-BOUND, BOUND), method="bounded", options={"xatol": TOL * 1e-2}
    )
    return float(res.x)


def _estimate_spatial(prob: _Problem) -> tuple[float, float]:
    if not prob.lag and not prob.err:
        return 0.0, 0.0
    if prob.lag and not prob.err:
        return _maximize_scalar(lambda r: prob.profile(r, 0.0)[0]), 0.0
    if prob.err and not prob.lag:
        return 0.0, _maximize_scalar(lambda l: prob.profile(0.0, l)[0])
    # sarar: coordinate ascent, then a joint polish
    rho = _maximize_scalar(lambda r: prob.profile(r, 0.0)[0])
    lam = 0.0
    for _ in range(500):
        lam_new = _maximize_scalar(lambda l: prob.profile(rho, l)[0])
        rho_new = _maximize_scalar(lambda r: prob.profile(r, lam_new)[0])
        change = max(abs(lam_new - lam), abs(rho_new - rho))
        rho, lam = rho_new, lam_new
        if change < TOL:
            break
    else:
        grid = np.linspace(-0.95, 0.95, 50)
        best = max(((prob.profile(r, l)[0], r, l) for r in grid for l in grid))
        rho, lam = best[1], best[2]
    res = optimize.minimize(
        lambda t: -prob.profile(t[0], t[1])[0],
        x0=[rho, lam],
        method="L-BFGS-B",
        bounds=[(-BOUND, BOUND)] * 2,
        options={"ftol": 1e-15, "gtol": 1e-10},
    )
    if -res.fun > prob.profile(rho, lam)[0]:
        rho, lam = float(res.x[0]), float(res.x[1])
    return rho, lam


def numerical_hessian(fn, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian with steps ``rel_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    m = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    H = np.empty((m, m))
    f0 = fn(x)
    E = np.diag(h)
    for i in range(m):
        H[i, i] = (fn(x + 2 * E[i]) - 2 * f0 + fn(x - 2 * E[i])) / (4 * h[i] ** 2)
        for j in range(i):
            val = (
                fn(x + E[i] + E[j]) - fn(x + E[i] - E[j]) - fn(x - E[i] + E[j]) + fn(x - E[i] - E[j])
            ) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    return H


def numerical_gradient(fn, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = rel_step * np.maximum(1.0, np.abs(x))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h[i])
    return g


def _design(data: Dataset, spec: ModelSpec, W: SpatialWeights):
    """Return (y, Z, names, n_theta, W_used, groups, rows)."""
    if spec.regimes is not None:
        des = regime_design(data, spec.regimes)
        rows = des.map
        Wu = W if rows.size == data.n else W.subset(rows)
        Xb, names, c = des.X_block, list(des.names), des.c
        groups = des.regime if spec.regime_variance else None
    else:
        rows = np.arange(data.n)
        Wu, Xb, names, c, groups = W, data.X, list(data.names), 1, None
    y = data.y[rows]
    n_theta = 0
    if spec.kind == "sdm":
        k = data.k
        keep_cols = [b * k + j for b in range(c) for j in range(1, k)]
        lagged = Wu.M @ Xb[:, keep_cols]
        names += [f"M_{names[i]}" for i in keep_cols]
        Xb = np.hstack([Xb, lagged])
        n_theta = len(keep_cols)
    return y, Xb, names, n_theta, Wu, groups, rows


def fit_model(data: Dataset, M: SpatialWeights, spec: ModelSpec) -> ModelFit:
    """Maximum likelihood fit of ``spec.kind`` on ``data`` with weights ``M``."""
    if M.M.shape != (data.n, data.n):
        raise ConfigError("weight matrix does not match the dataset size")
    y, Z, names, n_theta, W, groups, rows = _design(data, spec, M)
    n, q = Z.shape
    if np.linalg.matrix_rank(Z) < q:
        raise DesignError("design matrix is rank deficient")
    prob = _Problem(y, Z, W, spec.kind, groups)
    rho, lam = _estimate_spatial(prob)
    ll, beta, sig = prob.profile(rho, lam)
    n_spatial = int(prob.lag) + int(prob.err)
    n_params = q + n_spatial + sig.size
    aic = -2.0 * ll + 2.0 * n_params

    boundary = any(abs(v) > BOUND - 1e-4 for v in (rho, lam))
    if boundary:
        warnings.warn(f"{spec.label}: spatial parameter at search boundary", BoundaryWarning, stacklevel=2)

    m = q + n_spatial
    se_ok = True
    if spec.kind == "ols" and groups is None:
        resid = y - Z @ beta
        s2 = resid @ resid / (n - q)
        _, R = np.linalg.qr(Z)
        Rinv = np.linalg.solve(R, np.eye(q))
        se = np.sqrt(s2 * np.sum(Rinv * Rinv, axis=1))
        pvalues = 2 * stats.t.sf(np.abs(beta / se), n - q)
    else:
        theta = prob.pack(beta, rho, lam, sig)
        H = numerical_hessian(prob.full_vec, theta)
        info = -0.5 * (H + H.T)
        try:
            np.linalg.cholesky(info)
            cov = np.linalg.inv(info)
            se = np.sqrt(np.diag(cov))[:m]
        except np.linalg.LinAlgError:
            se_ok = False
            warnings.warn(f"{spec.label}: Hessian not negative definite; standard errors unavailable",
                          SEUnavailableWarning, stacklevel=2)
            se = np.full(m, np.nan)
        est = np.concatenate([beta, [v for v, on in ((rho, prob.lag), (lam, prob.err)) if on]])
        pvalues = 2 * stats.norm.sf(np.abs(est / se))

    return ModelFit(
        kind=spec.kind,
        label=spec.label,
        names=names,
        beta=beta[: q - n_theta],
        theta=beta[q - n_theta :],
        rho=float(rho) if prob.lag else None,
        lam=float(lam) if prob.err else None,
        sigma2=np.asarray(sig, dtype=float),
        loglik=float(ll),
        aic=float(aic),
        se=np.asarray(se, dtype=float),
        pvalues=np.asarray(pvalues, dtype=float),
        n=n,
        n_params=n_params,
        boundary=boundary,
        se_available=se_ok,
        rows=rows,
    )


def full_loglik(data: Dataset, M: SpatialWeights, spec: ModelSpec, fit: ModelFit) -> float:
    """Direct (non-concentrated) log-likelihood at the parameters stored in ``fit``."""
    y, Z, _, _, W, groups, _ = _design(data, spec, M)
    prob = _Problem(y, Z, W, spec.kind, groups)
    return prob.full(fit.coefficients, fit.rho or 0.0, fit.lam or 0.0, fit.sigma2)


def loglik_gradient(data: Dataset, M: SpatialWeights, spec: ModelSpec, fit: ModelFit) -> np.ndarray:
    y, Z, _, _, W, groups, _ = _design(data, spec, M)
    prob = _Problem(y, Z, W, spec.kind, groups)
    theta = prob.pack(fit.coefficients, fit.rho or 0.0, fit.lam or 0.0, fit.sigma2)
    return numerical_gradient(prob.full_vec, theta)


def compare_models(fits: list[ModelFit]) -> list[dict]:
    """Rank fits by ascending AIC (stable for ties)."""
    if not fits:
        return []
    sizes = {f.n for f in fits}
    if len(sizes) > 1:
        raise ComparisonError(f"fits use different sample sizes: {sorted(sizes)}")
    order = sorted(range(len(fits)), key=lambda i: fits[i].aic)
    return [
        {
            "rank": r + 1,
            "label": fits[i].label,
            "aic": fits[i].aic,
            "loglik": fits[i].loglik,
            "n_params": fits[i].n_params,
        }
        for r, i in enumerate(order)
    ]
