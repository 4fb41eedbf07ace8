"""Locally linear estimation with a square window.

The comparison method: at each point, an ordinary least-squares affine fit
to the observations in the (grid-clipped) open square window ``B_h(t/m)``,
evaluated at the point.  Uniform weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError
from .grid import Cube, _as_index

DEFAULT_GRID_T = (1, 2, 3, 5, 8, 12, 18)


@dataclass(frozen=True)
class BaselineConfig:
    """Bandwidth policy of the locally linear baseline.

    Parameters
    ----------
    policy : {"fixed", "oracle", "cv"}
        ``fixed`` uses ``h``; ``oracle`` picks the grid rung with the smallest
        error against the true signal; ``cv`` the one with the smallest
        leave-one-out error.
    h : float, optional
        Window edge for the fixed policy.
    grid_T : tuple of int
        Candidate half-widths; rung ``T`` is the square window of side
        ``2T + 1`` points, i.e. edge ``(2T + 1) / m``.
    """

    policy: str = "oracle"
    h: float | None = None
    grid_T: tuple = DEFAULT_GRID_T

    def __post_init__(self):
        if self.policy not in ("fixed", "oracle", "cv"):
            raise ConfigError(f"unknown bandwidth policy {self.policy!r}")
        if self.policy == "fixed" and (self.h is None or self.h <= 0):
            raise ConfigError("fixed policy needs a positive h")
        if not self.grid_T or min(self.grid_T) < 1:
            raise ConfigError("grid_T must be a nonempty tuple of positive radii")

    def edges(self, m: int) -> list:
        return [edge_of_radius(T, m) for T in self.grid_T]


def edge_of_radius(T: int, m: int) -> float:
    return (2 * T + 1) / m


def radius_of_edge(h: float, m: int) -> int:
    """Half-width in points of the open window of edge ``h``."""
    return max(math.ceil(m * h / 2 - 1e-9) - 1, 0)


def local_linear_estimate(y: np.ndarray, t, h: float) -> tuple:
    """Affine least-squares fit over the window around ``t``, evaluated at ``t``.

    Returns ``(value, fallback)``; ``fallback`` is True when the design was
    degenerate and the window mean was used instead.
    """
    y = np.asarray(y)
    m, d = y.shape[0] - 1, y.ndim
    t = _as_index(t, d)
    sl = Cube(tuple(ti / m for ti in t), h, open_=True).slices(m)
    idx = np.stack(np.meshgrid(*[np.arange(s.start, s.stop) for s in sl], indexing="ij"), -1)
    u = (idx.reshape(-1, d) - np.asarray(t)) / m
    obs = y[sl].reshape(-1)
    X = np.hstack([np.ones((len(u), 1)), u])
    if np.linalg.matrix_rank(X) < d + 1:
        return obs.mean(), True
    beta = np.linalg.lstsq(X, obs, rcond=None)[0]
    return beta[0], False


def _box_sum(x: np.ndarray, R: int) -> np.ndarray:
    """Sum of ``x`` over the grid-clipped box of radius ``R`` around every index."""
    for ax in range(x.ndim):
        n = x.shape[ax]
        c = np.concatenate([np.zeros_like(np.take(x, [0], axis=ax)), np.cumsum(x, axis=ax)], axis=ax)
        t = np.arange(n)
        hi = np.minimum(t + R, n - 1) + 1
        lo = np.maximum(t - R, 0)
        x = np.take(c, hi, axis=ax) - np.take(c, lo, axis=ax)
    return x


def _moments(y: np.ndarray, R: int):
    """Normal-equation matrices in coordinates centred at each point (grid units)."""
    d = y.ndim
    grids = np.indices(y.shape).astype(float)
    ones = np.ones(y.shape)
    S0 = _box_sum(ones, R)
    S1 = [_box_sum(g, R) for g in grids]
    M = np.empty(y.shape + (d + 1, d + 1))
    M[..., 0, 0] = S0
    for i in range(d):
        Si = S1[i] - grids[i] * S0
        M[..., 0, i + 1] = M[..., i + 1, 0] = Si
        for j in range(i, d):
            Sij = (_box_sum(grids[i] * grids[j], R) - grids[i] * S1[j]
                   - grids[j] * S1[i] + grids[i] * grids[j] * S0)
            M[..., i + 1, j + 1] = M[..., j + 1, i + 1] = Sij
    rhs = np.empty(y.shape + (d + 1,))
    Y = _box_sum(y, R)
    rhs[..., 0] = Y
    for i in range(d):
        rhs[..., i + 1] = _box_sum(y * grids[i], R) - grids[i] * Y
    return M, rhs


def local_linear_field(y: np.ndarray, h: float, return_leverage: bool = False):
    """Locally linear estimate at every grid point for window edge ``h``.

    Windows are clipped at the grid boundary, so away from the boundary the
    estimate equals the window mean.  With ``return_leverage`` the weight of
    ``y_t`` in its own fit is also returned (for leave-one-out errors).
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[0] - 1
    R = radius_of_edge(h, m)
    M, rhs = _moments(y, R)
    # the fit has rank d+1 whenever the clipped window has >= 2 points per axis
    ok = np.abs(np.linalg.det(M)) > 1e-9 * np.abs(M[..., 0, 0]) ** (y.ndim + 1)
    est = rhs[..., 0] / M[..., 0, 0]
    lev = 1.0 / M[..., 0, 0]
    if ok.any():
        Minv = np.linalg.inv(M[ok])
        est[ok] = np.einsum("pj,pj->p", Minv[:, 0, :], rhs[ok])
        lev[ok] = Minv[:, 0, 0]
    return (est, lev) if return_leverage else est


def select_bandwidth(y: np.ndarray, cfg: BaselineConfig, truth=None, mask=None) -> float:
    """Window edge chosen by the configured policy.

    ``truth`` is required by the oracle policy; ``mask`` restricts the error
    used by the oracle and cv policies to a region (e.g. ``B_gamma``).
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[0] - 1
    if cfg.policy == "fixed":
        return cfg.h
    sel = np.ones(y.shape, dtype=bool) if mask is None else mask
    errs = []
    for h in cfg.edges(m):
        if cfg.policy == "oracle":
            if truth is None:
                raise ValueError("oracle policy needs the true signal")
            est = local_linear_field(y, h)
            errs.append(np.mean((est - np.asarray(truth))[sel] ** 2))
        else:
            est, lev = local_linear_field(y, h, return_leverage=True)
            loo = (y - est) / np.maximum(1.0 - lev, 1e-12)
            errs.append(np.mean(loo[sel] ** 2))
    # ties within roundoff go to the largest window
    errs = np.asarray(errs)
    tol = 1e-9 * errs.min() + 1e-24 * (1.0 + np.mean(y[sel] ** 2))
    return cfg.edges(m)[int(np.flatnonzero(errs <= errs.min() + tol)[-1])]


class LocalLinearDenoiser(TransformerMixin, BaseEstimator):
    """Locally linear square-window denoiser for real fields.

    Parameters
    ----------
    policy : {"fixed", "cv"}
        Bandwidth policy; the oracle policy needs the true signal and is
        available through :func:`select_bandwidth` only.
    h : float, optional
        Window edge for the fixed policy.
    grid_T : tuple of int
        Candidate radii for cross-validation.
    """

    def __init__(self, policy="cv", h=None, grid_T=DEFAULT_GRID_T):
        self.policy = policy
        self.h = h
        self.grid_T = grid_T

    def fit(self, X, y=None):
        X = _check_field(X)
        if self.policy == "oracle":
            raise ConfigError("the oracle policy needs the true signal; use select_bandwidth")
        cfg = BaselineConfig(policy=self.policy, h=self.h, grid_T=tuple(self.grid_T))
        self.h_ = select_bandwidth(X, cfg)
        self.n_features_in_ = X.size
        return self

    def transform(self, X):
        X = _check_field(X)
        if not hasattr(self, "h_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("LocalLinearDenoiser is not fitted yet")
        return local_linear_field(X, self.h_)


def _check_field(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim < 1 or len(set(X.shape)) != 1 or X.shape[0] < 2:
        raise ValueError(f"expected a field of shape (m+1,)*d, got {X.shape}")
    if np.iscomplexobj(X):
        raise ValueError("the locally linear baseline handles real fields only")
    if not np.all(np.isfinite(X)):
        raise ValueError("field contains NaN or inf")
    return X.astype(float)
