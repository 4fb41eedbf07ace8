"""Adaptive window selection over a ladder of filter-fitting estimates.

At every interior point ``t`` the window estimates for a geometric ladder of
radii ``T`` (edges ``h = (8T+1)/m``) are compared; a rung is *normal* when
its estimate agrees with every smaller rung's estimate to within
``4 C1 S_n(h')``, ``S_n`` being the stochastic term of the smaller window.
The adaptive estimate is the estimate of the largest normal rung.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .exceptions import ConfigError, GeometryError
from .filters import DEFAULT_MAX_ITER, DEFAULT_RTOL, extract_patches, fit_filter, solve_batch
from sklearn.base import BaseEstimator, TransformerMixin

from .grid import _as_index, interior_indices, t_of_h

_CHUNK_BYTES = 192 * 2**20
# relative slack absorbing floating-point roundoff in the normality comparisons
_ROUNDOFF = 1e-12


@dataclass(frozen=True)
class EstimatorConfig:
    """Design parameters of the adaptive estimator.

    ``omega`` is the safety factor in the stochastic term and ``c1`` the
    aggregation constant of the normality test.  ``sigma`` is the known noise
    level.  ``max_T`` optionally caps the ladder below the admissibility
    limit.  ``atol`` defaults to ``1e-3 * sigma``.
    """

    mu: float = 1.0
    gamma: float = 0.5
    omega: float = 2.0
    c1: float = 0.5
    ladder_ratio: float = 1.5
    sigma: float = 1.0
    max_T: int | None = None
    max_iter: int = DEFAULT_MAX_ITER
    rtol: float = DEFAULT_RTOL
    atol: float | None = None
    precision: str = "double"
    n_jobs: int = 1

    def __post_init__(self):
        checks = [
            (self.mu >= 1, "mu must be >= 1"),
            (0 < self.gamma < 1, "gamma must lie in (0, 1)"),
            (self.omega > 0, "omega must be positive"),
            (self.c1 > 0, "c1 must be positive"),
            (self.ladder_ratio > 1, "ladder_ratio must exceed 1"),
            (self.sigma >= 0, "sigma must be >= 0"),
            (self.max_T is None or self.max_T >= 0, "max_T must be >= 0"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.rtol >= 0, "rtol must be >= 0"),
            (self.precision in ("double", "single"), "precision must be 'double' or 'single'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def solver_atol(self) -> float:
        return 1e-3 * self.sigma if self.atol is None else self.atol


@dataclass
class PointEstimate:
    value: complex
    chosen_h: float
    chosen_T: int
    rung_T: list
    rung_estimates: np.ndarray
    rung_sn: np.ndarray
    normal: np.ndarray
    objectives: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class FieldEstimate:
    """Result of :func:`adaptive_field_estimate`.

    ``chosen_T`` is -1 at boundary points (filled from the nearest interior
    point).  ``rung_estimates`` / ``objectives`` / ``normal`` have one row per
    interior point (row-major) and one column per ladder rung; entries of
    rungs that are not admissible at a point are NaN / False.
    """

    estimate: np.ndarray
    chosen_T: np.ndarray
    ladder: list
    points: np.ndarray
    rung_estimates: np.ndarray
    objectives: np.ndarray
    normal: np.ndarray


def ladder_radii(T_max: int, ratio: float = 1.5) -> list:
    """``[0, 1, 2, 3, 5, 8, 12, 18, 27, ...]`` up to ``T_max`` (next = ceil(ratio * T))."""
    out = [0]
    T = 1
    while T <= T_max:
        out.append(T)
        T = max(T + 1, math.ceil(ratio * T - 1e-12))
    return out


def rung_edge(T: int, m: int) -> float:
    """Window edge whose induced radius ``T_h(x)`` equals ``T``."""
    return (8 * T + 1) / m


def max_radius(t, m: int) -> int:
    """Largest ladder radius whose rung window is admissible at ``t``."""
    room = min(min(ti, m - ti) for ti in _as_index(t))
    return max((room - 1) // 4, 0) if room >= 1 else -1


def grid_ladder(m: int, cfg: EstimatorConfig) -> list:
    cap = max_radius((m // 2,), m)
    if cfg.max_T is not None:
        cap = min(cap, cfg.max_T)
    return ladder_radii(cap, cfg.ladder_ratio)


def stochastic_term(h: float, n: int, sigma: float, omega: float, d: int) -> float:
    """``S_n(h) = sigma (n h^d)^(-1/2) omega sqrt(ln n)``."""
    if h <= 0 or n < 2:
        raise ValueError("need h > 0 and n >= 2")
    return sigma * omega * math.sqrt(math.log(n)) / math.sqrt(n * h**d)


def _sn_ladder(ladder, m, d, cfg):
    n = m**d
    sn = np.array([stochastic_term(rung_edge(T, m), n, cfg.sigma, cfg.omega, d) for T in ladder])
    if cfg.sigma > 0 and np.any(np.diff(sn) >= 0):
        raise ConfigError("stochastic terms must decrease strictly along the ladder")
    return sn


def is_normal(index: int, estimates, sn, c1: float) -> bool:
    """Normality of rung ``index`` given estimates and stochastic terms of rungs ``0..index``."""
    est = np.asarray(estimates)
    sn = np.asarray(sn)
    if index == 0:
        return True
    diffs = np.abs(est[:index] - est[index])
    slack = _ROUNDOFF * (np.abs(est[:index]) + np.abs(est[index]))
    return bool(np.all(diffs <= 4.0 * c1 * sn[:index] + slack))


def normal_matrix(estimates: np.ndarray, sn: np.ndarray, c1: float) -> np.ndarray:
    """Vectorised normality for ``(P, K)`` rung estimates (NaN = not admissible)."""
    est = np.asarray(estimates)
    diffs = np.abs(est[:, None, :] - est[:, :, None])  # [p, k, j] = |e_j - e_k|
    slack = _ROUNDOFF * (np.abs(est[:, None, :]) + np.abs(est[:, :, None]))
    ok = diffs <= 4.0 * c1 * sn[None, None, :] + slack
    lower = np.tril(np.ones((len(sn), len(sn)), dtype=bool), k=-1)  # j < k
    normal = np.all(ok | ~lower[None], axis=2)
    return normal & ~np.isnan(est.real)


def largest_normal(normal: np.ndarray) -> np.ndarray:
    """Index of the largest normal rung in each row (rung 0 is always normal)."""
    K = normal.shape[1]
    return K - 1 - np.argmax(normal[:, ::-1], axis=1)


def _solve_chunk(y, centers, T, cfg):
    patches = extract_patches(y, centers, 4 * T)
    res = solve_batch(patches, T, cfg.mu, max_iter=cfg.max_iter,
                      atol=cfg.solver_atol, rtol=cfg.rtol, precision=cfg.precision)
    return res["estimate"], res["objective"]


def _chunks(n_points, T, d):
    side = 8 * T + 1
    per_point = 16 * 10 * (side + 8) ** d
    size = max(1, _CHUNK_BYTES // per_point)
    return [slice(i, min(i + size, n_points)) for i in range(0, n_points, size)]


def rung_estimates(y: np.ndarray, points: np.ndarray, cfg: EstimatorConfig, ladder=None):
    """Window estimates of every ladder rung at every point.

    Returns ``(ladder, estimates, objectives)``; the arrays have shape
    ``(len(points), len(ladder))`` with NaN where a rung is not admissible.
    """
    y = np.asarray(y)
    m, d = y.shape[0] - 1, y.ndim
    points = np.atleast_2d(np.asarray(points, dtype=np.intp))
    if ladder is None:
        ladder = grid_ladder(m, cfg)
    room = np.minimum(points, m - points).min(axis=1)
    if np.any(room < 1):
        raise GeometryError("points must be interior")
    est = np.full((len(points), len(ladder)), np.nan, dtype=np.complex128)
    obj = np.full((len(points), len(ladder)), np.nan)
    est[:, 0] = y[tuple(points.T)]
    obj[:, 0] = 0.0
    for k, T in enumerate(ladder):
        if T == 0:
            continue
        sel = np.flatnonzero(room >= 4 * T + 1)
        if sel.size == 0:
            continue
        chunks = _chunks(sel.size, T, d)
        jobs = (delayed(_solve_chunk)(y, points[sel[c]], T, cfg) for c in chunks)
        out = Parallel(n_jobs=cfg.n_jobs)(jobs) if cfg.n_jobs != 1 else [j[0](*j[1], **j[2]) for j in jobs]
        est[sel, k] = np.concatenate([o[0] for o in out])
        obj[sel, k] = np.concatenate([o[1] for o in out])
    if not np.iscomplexobj(y):
        est = est.real + 0j * np.isnan(est.real)
    return ladder, est, obj


def window_estimate(y: np.ndarray, t, h: float, cfg: EstimatorConfig) -> complex:
    """Estimate of ``f(t/m)`` from the window ``B_h(t/m)``."""
    y = np.asarray(y)
    m = y.shape[0] - 1
    t = _as_index(t, y.ndim)
    T = t_of_h(t, h, m)
    if h <= 1.0 / m or T == 0:
        return complex(y[t])
    rep = fit_filter(y, t, T, cfg.mu, max_iter=cfg.max_iter, atol=cfg.solver_atol, rtol=cfg.rtol)
    value = rep.estimate
    return complex(value.real) if not np.iscomplexobj(y) else value


def adaptive_point_estimate(y: np.ndarray, t, cfg: EstimatorConfig) -> PointEstimate:
    y = np.asarray(y)
    m, d = y.shape[0] - 1, y.ndim
    t = _as_index(t, d)
    ladder = [T for T in grid_ladder(m, cfg) if T <= max_radius(t, m)]
    ladder, est, obj = rung_estimates(y, np.array([t]), cfg, ladder)
    sn = _sn_ladder(ladder, m, d, cfg)
    normal = normal_matrix(est, sn, cfg.c1)
    k = int(largest_normal(normal)[0])
    value = est[0, k] if np.iscomplexobj(y) else est[0, k].real
    return PointEstimate(
        value=value,
        chosen_h=rung_edge(ladder[k], m) if ladder[k] else 1.0 / m,
        chosen_T=ladder[k],
        rung_T=list(ladder),
        rung_estimates=est[0],
        rung_sn=sn,
        normal=normal[0],
        objectives=obj[0],
    )


def adaptive_field_estimate(y: np.ndarray, cfg: EstimatorConfig, points=None) -> FieldEstimate:
    """Adaptive estimate at every interior point (or at ``points`` only).

    Boundary points take the value of the nearest interior point.  When
    ``points`` is given, the returned field holds NaN away from those points.
    """
    y = np.asarray(y)
    m, d = y.shape[0] - 1, y.ndim
    full = points is None
    pts = interior_indices(m, d) if full else np.atleast_2d(np.asarray(points, dtype=np.intp))
    ladder, est, obj = rung_estimates(y, pts, cfg)
    sn = _sn_ladder(ladder, m, d, cfg)
    normal = normal_matrix(est, sn, cfg.c1)
    k = largest_normal(normal)
    values = est[np.arange(len(pts)), k]
    dtype = np.complex128 if np.iscomplexobj(y) else np.float64
    if not np.iscomplexobj(y):
        values = values.real
    out = np.full(y.shape, np.nan, dtype=dtype)
    chosen = np.full(y.shape, -1, dtype=int)
    out[tuple(pts.T)] = values
    chosen[tuple(pts.T)] = np.asarray(ladder)[k]
    if full:
        # boundary policy: nearest interior point
        idx = np.indices(y.shape)
        src = tuple(np.clip(a, 1, m - 1) for a in idx)
        out = out[src]
    return FieldEstimate(
        estimate=out,
        chosen_T=chosen,
        ladder=list(ladder),
        points=pts,
        rung_estimates=est,
        objectives=obj,
        normal=normal,
    )


def fit_defect(f: np.ndarray, t, T: int, cfg: EstimatorConfig) -> float:
    """Approximation defect of noiseless ``f`` on the rung-``T`` window.

    The filter-fitting objective on ``f`` divided by ``1 + mu``; zero for ``T = 0``.
    """
    if T == 0:
        return 0.0
    rep = fit_filter(f, t, T, cfg.mu, max_iter=cfg.max_iter, atol=0.0, rtol=cfg.rtol)
    return rep.objective / (1.0 + cfg.mu)


def ideal_window_oracle(f: np.ndarray, t, cfg: EstimatorConfig, defect=None) -> float:
    """Largest rung edge whose defect stays below the stochastic term.

    The ladder is scanned upward and stops at the first rung that fails, so
    every returned rung has all smaller rungs passing as well.
    """
    f = np.asarray(f)
    m, d = f.shape[0] - 1, f.ndim
    t = _as_index(t, d)
    defect = defect or (lambda g, tt, T: fit_defect(g, tt, T, cfg))
    ladder = [T for T in grid_ladder(m, cfg) if T <= max_radius(t, m)]
    sn = _sn_ladder(ladder, m, d, cfg)
    best = None
    for T, s in zip(ladder, sn):
        if defect(f, t, T) <= s:
            best = T
        else:
            break
    if best is None:
        warnings.warn("no rung satisfies the defect bound; returning the smallest rung")
        best = ladder[0]
    return rung_edge(best, m) if best else 1.0 / m


def regime_check(k: float, p: float, d: int, R: float, sigma: float, n: int, D: float) -> bool:
    """Both sample-size inequalities of the main risk bound with unit constant.

    ``n^e1 >= (R/sigma) sqrt(n / ln n) >= D^(-e2)`` with
    ``e1 = (2kp + d(p-2)) / (2dp)``, ``e2 = (2kp + d(p-2)) / (2p)``.
    """
    if not p > d or k < 1:
        raise ValueError("need p > d and k >= 1")
    if math.isinf(p):
        e1, e2 = (2 * k + d) / (2 * d), (2 * k + d) / 2
    else:
        e1 = (2 * k * p + d * (p - 2)) / (2 * d * p)
        e2 = (2 * k * p + d * (p - 2)) / (2 * p)
    if sigma == 0:
        return False
    if D <= 0:
        return False
    mid = R / sigma * math.sqrt(n / math.log(n))
    return bool(n**e1 >= mid >= D ** (-e2))


def with_sigma(cfg: EstimatorConfig, sigma: float) -> EstimatorConfig:
    return replace(cfg, sigma=sigma)


class AdaptiveDenoiser(TransformerMixin, BaseEstimator):
    """Adaptive well-filtered denoiser with the scikit-learn transformer API.

    ``X`` is one field of shape ``(m+1,)*d``; ``transform`` returns the
    adaptive estimate at every grid point.  There is nothing to learn, so
    ``fit`` only validates the parameters.

    Parameters
    ----------
    sigma : float
        Known noise level.
    mu, omega, c1, gamma, ladder_ratio, max_T
        See :class:`EstimatorConfig`.
    max_iter, rtol, precision
        Filter-fitting solver settings.
    n_jobs : int
        Workers for the per-point fits.

    Attributes
    ----------
    chosen_T_ : ndarray
        Radius of the selected rung at every point of the last transform
        (-1 on the boundary).
    """

    def __init__(self, sigma=1.0, mu=1.0, omega=2.0, c1=0.5, gamma=0.5, ladder_ratio=1.5,
                 max_T=None, max_iter=DEFAULT_MAX_ITER, rtol=DEFAULT_RTOL, precision="double",
                 n_jobs=1):
        self.sigma = sigma
        self.mu = mu
        self.omega = omega
        self.c1 = c1
        self.gamma = gamma
        self.ladder_ratio = ladder_ratio
        self.max_T = max_T
        self.max_iter = max_iter
        self.rtol = rtol
        self.precision = precision
        self.n_jobs = n_jobs

    def _config(self) -> EstimatorConfig:
        return EstimatorConfig(mu=self.mu, gamma=self.gamma, omega=self.omega, c1=self.c1,
                               ladder_ratio=self.ladder_ratio, sigma=self.sigma, max_T=self.max_T,
                               max_iter=self.max_iter, rtol=self.rtol, precision=self.precision,
                               n_jobs=self.n_jobs)

    def fit(self, X, y=None):
        X = _check_field(X)
        self.config_ = self._config()
        self.n_features_in_ = X.size
        return self

    def transform(self, X):
        if not hasattr(self, "config_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("AdaptiveDenoiser is not fitted yet")
        X = _check_field(X)
        fe = adaptive_field_estimate(X, self.config_)
        self.chosen_T_ = fe.chosen_T
        return fe.estimate


def _check_field(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim < 1 or len(set(X.shape)) != 1 or X.shape[0] < 3:
        raise ValueError(f"expected a field of shape (m+1,)*d with m >= 2, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("field contains NaN or inf")
    return X if np.iscomplexobj(X) else X.astype(float)
