"""Fields on the regular grid {0..m}^d and the geometry around them.

A field is stored as a dense numpy array of shape ``(m + 1,) * d``.  Index
``tau`` of the array corresponds to the grid point ``tau / m`` of the unit
cube.  Axes are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sfft

from .exceptions import GeometryError

_EPS = 1e-9


@dataclass(frozen=True)
class GridField:
    """A complex- or real-valued field sampled on ``{0..m}^d``."""

    data: np.ndarray
    kind: str = field(default="")

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim < 1 or len(set(data.shape)) != 1 or data.shape[0] < 2:
            raise ValueError(f"field must have shape (m+1,)*d with m >= 1, got {data.shape}")
        kind = self.kind or ("complex" if np.iscomplexobj(data) else "real")
        if kind not in ("real", "complex"):
            raise ValueError(f"unknown scalar kind {kind!r}")
        if kind == "real":
            if np.iscomplexobj(data):
                if np.any(data.imag != 0):
                    raise ValueError("real field has nonzero imaginary parts")
                data = data.real
            data = data.astype(np.float64)
        else:
            data = data.astype(np.complex128)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", kind)

    @property
    def d(self) -> int:
        return self.data.ndim

    @property
    def m(self) -> int:
        return self.data.shape[0] - 1


@dataclass(frozen=True)
class Cube:
    """Axis-aligned cube of ``[0, 1]^d`` given by its center and edge.

    ``open_`` selects the open cube ``|u_i - c_i| < edge/2`` (the windows
    ``B_h(x)``) rather than the closed one.
    """

    center: tuple
    edge: float
    open_: bool = False

    @property
    def d(self) -> int:
        return len(self.center)

    def index_ranges(self, m: int) -> tuple:
        """Per-axis ``range`` of grid indices ``tau`` with ``tau/m`` in the cube.

        The ranges are clipped to ``{0..m}``.
        """
        out = []
        half = self.edge / 2.0
        for c in self.center:
            lo_f, hi_f = (c - half) * m, (c + half) * m
            if self.open_:
                lo = math.floor(lo_f + _EPS) + 1
                hi = math.ceil(hi_f - _EPS) - 1
            else:
                lo = math.ceil(lo_f - _EPS)
                hi = math.floor(hi_f + _EPS)
            out.append(range(max(lo, 0), min(hi, m) + 1))
        return tuple(out)

    def slices(self, m: int) -> tuple:
        ranges = self.index_ranges(m)
        if any(len(r) == 0 for r in ranges):
            raise GeometryError("cube does not meet the grid")
        return tuple(slice(r.start, r.stop) for r in ranges)


def unit_cube(d: int) -> Cube:
    return Cube(center=(0.5,) * d, edge=1.0)


@dataclass(frozen=True)
class CubeIndexSet:
    """The index box ``{tau : |tau - center| <= radius}`` (sup-norm)."""

    center: tuple
    radius: int

    @property
    def d(self) -> int:
        return len(self.center)

    def cardinality(self) -> int:
        return (2 * self.radius + 1) ** self.d

    def slices(self, shape: Sequence[int], clip: bool = False):
        """Array slices of the box; returns ``(slices, clipped)``.

        Without ``clip`` a box leaving the array raises ``GeometryError``.
        """
        sl, clipped = [], False
        for c, n in zip(self.center, shape):
            lo, hi = c - self.radius, c + self.radius + 1
            if lo < 0 or hi > n:
                if not clip:
                    raise GeometryError(
                        f"box of radius {self.radius} around {self.center} leaves the grid"
                    )
                clipped = True
                lo, hi = max(lo, 0), min(hi, n)
            sl.append(slice(lo, hi))
        return tuple(sl), clipped


@dataclass(frozen=True)
class Window:
    """Admissible window ``B_h(x)`` around ``x = t/m`` with its radius ``T_h(x)``."""

    t: tuple
    h: float
    T: int
    m: int

    @property
    def x(self) -> tuple:
        return tuple(ti / self.m for ti in self.t)

    @property
    def cube(self) -> Cube:
        return Cube(center=self.x, edge=self.h, open_=True)


def _as_index(t, d=None) -> tuple:
    t = tuple(int(v) for v in np.atleast_1d(t))
    if d is not None and len(t) != d:
        raise ValueError(f"index {t} has wrong dimension, expected {d}")
    return t


def shift(f: np.ndarray, axis: int, steps: int = 1) -> np.ndarray:
    """Shift operator: ``out[tau] = f[tau - steps * e_axis]``.

    Samples shifted in from outside the array are zero (zero extension of
    ``f`` to all of Z^d).
    """
    f = np.asarray(f)
    if not 0 <= axis < f.ndim:
        raise ValueError(f"axis {axis} out of range for a {f.ndim}-d field")
    out = np.zeros_like(f)
    n = f.shape[axis]
    if abs(steps) >= n:
        return out
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    if steps >= 0:
        src[axis] = slice(0, n - steps)
        dst[axis] = slice(steps, n)
    else:
        src[axis] = slice(-steps, n)
        dst[axis] = slice(0, n + steps)
    out[tuple(dst)] = f[tuple(src)]
    return out


def convolve(q, x: np.ndarray, t) -> complex:
    """Filter output ``(q(Delta) x)_t = sum_tau q_tau x_{t - tau}``.

    ``q`` is a :class:`~wellfiltered.filters.FilterKernel` or a coefficient
    array of shape ``(2T+1,)*d`` indexed by ``tau + T``.  Every sample touched
    by a nonzero coefficient must lie on the grid.
    """
    coeffs = np.asarray(getattr(q, "coeffs", q))
    x = np.asarray(x)
    t = np.asarray(_as_index(t, x.ndim))
    T = (coeffs.shape[0] - 1) // 2
    nz = np.argwhere(coeffs != 0)
    if nz.size == 0:
        return 0j
    src = t + T - nz  # t - tau with tau = k - T
    if np.any(src < 0) or np.any(src >= np.asarray(x.shape)):
        raise GeometryError(f"filter of radius {T} reads outside the grid at {tuple(t)}")
    return complex(np.sum(coeffs[tuple(nz.T)] * x[tuple(src.T)]))


def discrete_lq_norm(g: np.ndarray, q: float, B: Cube | None = None) -> float:
    """Discrete norm ``m^{-d/q} (sum_{tau in Z(B)} |g_tau|^q)^{1/q}``.

    ``B`` defaults to the whole unit cube; ``q = inf`` gives the max modulus.
    """
    g = np.asarray(g)
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    m = g.shape[0] - 1
    vals = np.abs(g if B is None else g[B.slices(m)])
    if vals.size == 0:
        raise GeometryError("empty restriction")
    if math.isinf(q):
        return float(vals.max())
    d = g.ndim
    vmax = vals.max()
    if vmax == 0:
        return 0.0
    s = np.sum((vals / vmax) ** q)
    return float(vmax * s ** (1.0 / q) * m ** (-d / q))


def restrict(e: np.ndarray, B) -> np.ndarray:
    """Restriction of a field to a cube (``Cube``, ``CubeIndexSet`` or slices)."""
    e = np.asarray(e)
    if isinstance(B, Cube):
        sl = B.slices(e.shape[0] - 1)
    elif isinstance(B, CubeIndexSet):
        sl = B.slices(e.shape)[0]
    else:
        sl = tuple(B)
    out = e[sl]
    if out.size == 0:
        raise GeometryError("empty restriction")
    return out


def dft_on_cube(e: np.ndarray, B) -> np.ndarray:
    """Unitary multidimensional DFT of the restriction of ``e`` to ``B``."""
    return sfft.fftn(restrict(e, B), norm="ortho")


def _cube_family(m: int, d: int, policy: str) -> Iterable[tuple]:
    """Yield ``(corner, side)`` of cubes with vertices on the grid."""
    n = m + 1
    if policy == "all":
        sides = range(1, n + 1)
    elif policy == "dyadic":
        sides = [1 << j for j in range(int(math.log2(n)) + 1)]
    elif policy == "points":
        sides = [1]
    else:
        raise ValueError(f"unknown cube family policy {policy!r}")
    for side in sides:
        step = side if policy == "dyadic" else 1
        starts = range(0, n - side + 1, step)
        yield side, starts


def theta_statistic(e: np.ndarray, sigma: float = 1.0, policy="dyadic") -> float:
    """Noise diagnostic: max DFT modulus over a family of sub-cubes, over sigma.

    ``policy`` is ``"dyadic"`` (power-of-two sides anchored on multiples of
    the side), ``"all"`` (every cube with vertices on the grid; cost grows
    like m^(d+1)), ``"points"`` (one-point cubes) or an explicit iterable of
    cubes accepted by :func:`dft_on_cube`.
    """
    e = np.asarray(e)
    if e.size == 0:
        raise ValueError("empty field")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d, m = e.ndim, e.shape[0] - 1
    if not isinstance(policy, str):
        return max(float(np.abs(dft_on_cube(e, B)).max()) for B in policy) / sigma
    best = 0.0
    for side, starts in _cube_family(m, d, policy):
        starts = list(starts)
        # all cubes of a given side at once: sliding windows along every axis
        win = np.lib.stride_tricks.sliding_window_view(e, (side,) * d)
        pick = np.ix_(*([starts] * d))
        blocks = win[pick]
        coef = sfft.fftn(blocks, axes=tuple(range(d, 2 * d)), norm="ortho")
        best = max(best, float(np.abs(coef).max()))
    return best / sigma


def t_of_h(t, h: float, m: int) -> int:
    """Largest ``T`` with the ``4T``-box around ``t`` inside ``Z(B_h(t/m))``.

    ``B_h(x)`` is the open cube of edge ``h``; it must lie in ``[0, 1]^d``.
    """
    t = _as_index(t)
    if h <= 0:
        raise GeometryError("window edge must be positive")
    for ti in t:
        if ti / m - h / 2 < -_EPS or ti / m + h / 2 > 1 + _EPS:
            raise GeometryError(f"window of edge {h} is not admissible at {t}")
    if h <= 1.0 / m + _EPS:
        return 0
    radius = math.ceil(m * h / 2 - _EPS) - 1
    return max(radius, 0) // 4


def make_window(t, h: float, m: int) -> Window:
    t = _as_index(t)
    return Window(t=t, h=h, T=t_of_h(t, h, m), m=m)


def max_admissible_edge(t, m: int) -> float:
    return 2.0 * min(min(ti, m - ti) for ti in _as_index(t)) / m


def shrink_cube(B: Cube, gamma: float) -> Cube:
    """Concentric cube with edge ``gamma * D(B)``."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return Cube(center=B.center, edge=gamma * B.edge, open_=B.open_)


def interior_indices(m: int, d: int) -> np.ndarray:
    """All ``t`` with ``0 < t_i < m``, row-major, shape ``(count, d)``."""
    axes = [np.arange(1, m)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def all_indices(m: int, d: int):
    return itertools.product(range(m + 1), repeat=d)
