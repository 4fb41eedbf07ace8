"""Filter kernels on the box O_T and the filter-fitting solver.

The fitting problem at a point ``t`` with radius ``T`` is

    minimize    max_k |DFT(y - q(Delta) y)_k|      (DFT over the 3T-box at t)
    subject to  supp q in O_T,  |q|_2 <= mu (2T+1)^(-d/2)

and the point estimate attached to a fit is ``(q(Delta) y)_t``.  The residual
box together with the filter support touches exactly the 4T-box around ``t``.

The problem is solved in its saddle form

    min_{|q|_2 <= r}  max_{|w|_1 <= 1}  Re <w, b - A q>

(``b`` the unitary DFT of ``y`` on the box, ``A`` the map from ``q`` to the
DFT of ``q(Delta) y`` on the box) with the primal-dual hybrid gradient
iteration.  Every operator application is a handful of FFTs on the 4T-patch,
and all points of a batch are iterated together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .exceptions import GeometryError
from .grid import CubeIndexSet, _as_index, convolve

DEFAULT_MAX_ITER = 2000
DEFAULT_RTOL = 1e-6
# box sides up to this use dense DFT matrices (faster than FFTs of prime sizes)
_DENSE_DFT_MAX = 100


@dataclass(frozen=True)
class FilterKernel:
    """Coefficients ``q_tau`` for ``tau`` in O_T, stored at array index ``tau + T``."""

    coeffs: np.ndarray
    T: int = field(init=False)
    l1_norm: float = field(init=False)
    l2_norm: float = field(init=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.ndim < 1 or len(set(c.shape)) != 1 or c.shape[0] % 2 != 1:
            raise ValueError(f"kernel must have shape (2T+1,)*d, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "T", (c.shape[0] - 1) // 2)
        object.__setattr__(self, "l1_norm", float(np.abs(c).sum()))
        object.__setattr__(self, "l2_norm", float(np.sqrt(np.sum(np.abs(c) ** 2))))

    @property
    def d(self) -> int:
        return self.coeffs.ndim

    def __call__(self, x, t) -> complex:
        return convolve(self, x, t)


@dataclass(frozen=True)
class FitReport:
    kernel: FilterKernel
    objective: float
    iterations: int
    converged: bool
    estimate: complex


@dataclass(frozen=True)
class WellFilteredParams:
    """Parameters of a well-filtered class: bound ``mu``, radius ``T``, reproduction radius ``L``."""

    mu: float
    T: int
    L: int | None = None

    def __post_init__(self):
        if self.L is None:
            object.__setattr__(self, "L", 3 * self.T)
        if self.mu < 1:
            raise ValueError("mu must be >= 1")
        if not self.L >= self.T >= 0:
            raise ValueError("need L >= T >= 0")


def norm_bound(mu: float, T: int, d: int) -> float:
    """Radius ``mu (2T+1)^(-d/2)`` of the feasible ball of kernels."""
    return mu * (2 * T + 1) ** (-d / 2.0)


def averaging_filter(T: int, d: int) -> FilterKernel:
    return FilterKernel(np.full((2 * T + 1,) * d, (2 * T + 1) ** (-d), dtype=np.complex128))


def modulated_averaging_filter(T: int, omega) -> FilterKernel:
    """``q_tau = (2T+1)^-d exp(i omega . tau)``; reproduces ``exp(i omega . tau)`` exactly."""
    if T < 0:
        raise ValueError("T must be >= 0")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    d = omega.size
    taus = np.meshgrid(*([np.arange(-T, T + 1)] * d), indexing="ij")
    phase = sum(w * tau for w, tau in zip(omega, taus))
    return FilterKernel((2 * T + 1) ** (-d) * np.exp(1j * phase))


def reproduction_defect(q: FilterKernel, s: np.ndarray, t, L: int) -> float:
    """``max_{|tau - t| <= L} |s_tau - (q(Delta) s)_tau|``."""
    s = np.asarray(s)
    t = _as_index(t, s.ndim)
    T = q.T
    CubeIndexSet(t, L + T).slices(s.shape)  # geometry check
    patch = s[CubeIndexSet(t, L + T).slices(s.shape)[0]]
    axes = tuple(range(s.ndim))
    n = patch.shape[0]
    full = sfft.ifftn(sfft.fftn(patch, axes=axes) * sfft.fftn(q.coeffs, s=patch.shape, axes=axes), axes=axes)
    # circular convolution is exact on the inner (L)-box
    inner = tuple(slice(2 * T, n) for _ in axes)
    out = full[inner]
    target = patch[tuple(slice(T, n - T) for _ in axes)]
    return float(np.abs(target - out).max())


def lemma1_theta(defect: float, mu: float, T: int, d: int = 1) -> float:
    """Reproduction-error level ``defect (1 + mu) (2T+1)^(-d/2)`` of a locally approximable signal."""
    if defect < 0 or mu < 1 or T < 0:
        raise ValueError("need defect >= 0, mu >= 1, T >= 0")
    return defect * (1.0 + mu) * (2 * T + 1) ** (-d / 2.0)


def extract_patches(y: np.ndarray, centers: np.ndarray, radius: int) -> np.ndarray:
    """Stack of the ``(2 radius + 1)^d`` boxes around each row of ``centers``."""
    y = np.asarray(y)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.intp))
    lo = centers - radius
    if np.any(lo < 0) or np.any(centers + radius >= np.asarray(y.shape)):
        raise GeometryError(f"a box of radius {radius} leaves the grid")
    win = np.lib.stride_tricks.sliding_window_view(y, (2 * radius + 1,) * y.ndim)
    return np.ascontiguousarray(win[tuple(lo.T)])


def _bcast(v, ndim):
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def _project_ball(q, radius, axes):
    nrm = np.sqrt(np.sum(np.abs(q) ** 2, axis=axes))
    scale = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
    return q * _bcast(scale.astype(nrm.dtype), q.ndim)


def _along(x, M, axis):
    """Apply the matrix ``M`` (rows = outputs) along ``axis`` of ``x``."""
    return np.moveaxis(np.moveaxis(x, axis, -1) @ M.T, -1, axis)


def _project_l1(w, weights=None):
    """Project each row of a complex ``(P, N)`` array onto the (weighted) unit l1 ball.

    With ``weights`` the ball is ``sum_k c_k |w_k| <= 1`` and the projection is
    taken in the matching weighted metric, i.e. a soft threshold of the moduli.
    """
    a = np.abs(w)
    c = np.ones(w.shape[1]) if weights is None else weights
    over = a @ c > 1.0
    if not over.any():
        return w
    ao = a[over]
    order = np.argsort(-ao, axis=1)
    u = np.take_along_axis(ao, order, axis=1)
    cw = c[order]
    csum = np.cumsum(cw, axis=1)
    thr = (np.cumsum(cw * u, axis=1) - 1.0) / csum
    rho = np.count_nonzero(u > thr, axis=1) - 1
    theta = thr[np.arange(len(rho)), rho]
    shrunk = np.maximum(ao - theta[:, None], 0.0)
    out = w.copy()
    out[over] = w[over] * (shrunk / np.where(ao > 0, ao, 1.0)).astype(a.dtype)
    return out


class _Operator:
    """``q -> DFT_box(q(Delta) y)`` and its adjoint for a batch of 4T-patches."""

    real = False

    def __init__(self, patches: np.ndarray, T: int):
        self.T = T
        self.d = patches.ndim - 1
        self.axes = tuple(range(1, self.d + 1))
        # any FFT length >= 8T+1 is exact: the used outputs never wrap around
        self.L = sfft.next_fast_len(patches.shape[1], real=self.real)
        self.n_box = 6 * T + 1
        self.conv = (slice(None),) + (slice(2 * T, 8 * T + 1),) * self.d
        self.box = (slice(None),) + (slice(T, 7 * T + 1),) * self.d
        self.q_sl = (slice(None),) + (slice(0, 2 * T + 1),) * self.d
        self.Ph = self._fft(patches, (self.L,) * self.d)
        # box sides 6T+1 are often prime; dense unitary DFT matrices beat FFTs there
        self.W = None
        if self.n_box <= _DENSE_DFT_MAX:
            k = np.arange(self.n_box)
            W = np.exp(-2j * np.pi * np.outer(k, k) / self.n_box) / np.sqrt(self.n_box)
            self.W = W.astype(np.result_type(patches.dtype, np.complex64))
        self._setup_box()
        self.b = self._box_fwd(patches[self.box])
        # ||A|| <= operator norm of the circular convolution with the patch
        self.lip = np.abs(self.Ph).reshape(len(patches), -1).max(axis=1)

    def _fft(self, x, s=None, norm=None):
        return sfft.fftn(x, s=s, axes=self.axes, norm=norm)

    def _conv(self, q):
        s = (self.L,) * self.d
        return sfft.ifftn(sfft.fftn(q, s=s, axes=self.axes) * self.Ph, axes=self.axes)

    def _corr(self, u):
        g = sfft.ifftn(sfft.fftn(u, axes=self.axes) * np.conj(self.Ph), axes=self.axes)
        return g[self.q_sl]

    def _setup_box(self):
        self.weights = None

    def _box_fwd(self, x):
        if self.W is None:
            return sfft.fftn(x, axes=self.axes, norm="ortho")
        for ax in self.axes:
            x = _along(x, self.W, ax)
        return x

    def _ibox(self, w):
        if self.W is None:
            return sfft.ifftn(w, axes=self.axes, norm="ortho")
        for ax in self.axes:
            w = _along(w, self.W.conj(), ax)
        return w

    def subset(self, keep):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.Ph, new.b, new.lip = self.Ph[keep], self.b[keep], self.lip[keep]
        return new

    def inner(self, w, v):
        """Real inner product ``Re <w, v>`` per row, over the full spectrum."""
        prod = np.real(np.conj(w) * v).reshape(len(w), -1)
        return prod.sum(axis=1) if self.weights is None else prod @ self.weights

    def apply(self, q):
        return self._box_fwd(self._conv(q)[self.conv])

    def adjoint(self, w):
        u = np.zeros((len(w),) + (self.L,) * self.d, dtype=w.real.dtype if self.real else w.dtype)
        u[self.conv] = self._ibox(w)
        return self._corr(u)


class _RealOperator(_Operator):
    """Real patches and real kernels.

    Spectra of real arrays are Hermitian, so only the half spectrum of the
    last axis is stored; ``weights`` counts every stored bin with its
    multiplicity in the full spectrum (1 for the zero column, else 2, the box
    side being odd).  The dual iterate stays Hermitian, so the adjoint is real.
    """

    real = True

    def _setup_box(self):
        half = self.n_box // 2 + 1
        col = np.full(half, 2.0)
        col[0] = 1.0
        self.weights = np.broadcast_to(col, (self.n_box,) * (self.d - 1) + (half,)).reshape(-1).copy()
        if self.W is not None:
            self.W_half = self.W[:half]
            self.W_back = (self.W[:, :half] * col).conj()

    def _fft(self, x, s=None, norm=None):
        return sfft.rfftn(x, s=s, axes=self.axes, norm=norm)

    def _conv(self, q):
        s = (self.L,) * self.d
        return sfft.irfftn(sfft.rfftn(q, s=s, axes=self.axes) * self.Ph, s=s, axes=self.axes)

    def _corr(self, u):
        s = (self.L,) * self.d
        g = sfft.irfftn(sfft.rfftn(u, axes=self.axes) * np.conj(self.Ph), s=s, axes=self.axes)
        return g[self.q_sl]

    def _box_fwd(self, x):
        if self.W is None:
            return sfft.rfftn(x, axes=self.axes, norm="ortho")
        x = _along(x, self.W_half, self.axes[-1])
        for ax in self.axes[:-1]:
            x = _along(x, self.W, ax)
        return x

    def _ibox(self, w):
        if self.W is None:
            return sfft.irfftn(w, s=(self.n_box,) * self.d, axes=self.axes, norm="ortho")
        for ax in self.axes[:-1]:
            w = _along(w, self.W.conj(), ax)
        # Hermitian symmetry: the full inverse is the weighted real part over the half
        return np.real(_along(w, self.W_back, self.axes[-1]))


def solve_batch(patches, T: int, mu: float, *, max_iter: int = DEFAULT_MAX_ITER,
                atol=0.0, rtol: float = DEFAULT_RTOL, q0=None, check_every: int = 10,
                step_ratio: float | None = None, precision: str = "double"):
    """Fit filters for a batch of ``(8T+1)^d`` patches centred on the points.

    Returns a dict of arrays: ``q`` (kernels), ``objective``, ``dual`` (best
    lower bound), ``iterations``, ``converged`` and ``estimate`` (the filter
    output at each centre).  ``atol`` may be a scalar or one value per patch.

    Real patches are fitted with real kernels: for real data the conjugate of
    an optimal kernel is optimal too, so its real part is an optimal real
    kernel with the same real-part estimate.  ``step_ratio`` is the ratio of
    primal to dual step sizes; it defaults to the radius of the kernel ball,
    which balances the diameters of the primal and dual feasible sets.
    ``precision="single"`` runs the iteration in 32-bit floats (about twice
    as fast; objectives and estimates are then accurate to ~1e-6 relative).
    """
    patches = np.asarray(patches)
    real = not np.iscomplexobj(patches)
    if precision not in ("double", "single"):
        raise ValueError(f"unknown precision {precision!r}")
    single = precision == "single"
    if real:
        patches = patches.astype(np.float32 if single else np.float64)
    else:
        patches = patches.astype(np.complex64 if single else np.complex128)
    P, d = patches.shape[0], patches.ndim - 1
    if T < 1:
        raise ValueError("T must be >= 1")
    if patches.shape[1:] != (8 * T + 1,) * d:
        raise GeometryError(f"patches must have shape (8T+1,)*d = {(8 * T + 1,) * d}")
    op = (_RealOperator if real else _Operator)(patches, T)
    radius = norm_bound(mu, T, d)
    qshape = (P,) + (2 * T + 1,) * d
    qax = tuple(range(1, d + 1))

    if q0 is None:
        q = np.full(qshape, (2 * T + 1) ** (-d), dtype=patches.dtype)
    else:
        q0 = np.asarray(q0)
        q = np.broadcast_to(q0.real if real else q0, qshape).astype(patches.dtype)
    q = _project_ball(q, radius, qax)
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (P,)).copy()
    atol += 1e-12 * np.maximum(np.abs(op.b).reshape(P, -1).max(axis=1), 1e-300)

    lip = np.where(op.lip > 0, op.lip, 1.0)
    ratio = radius if step_ratio is None else step_ratio
    rdt = q.real.dtype
    tau = _bcast((0.99 / lip * ratio).astype(rdt), q.ndim)
    sig = _bcast((0.99 / lip / ratio).astype(rdt), q.ndim)
    w = np.zeros_like(op.b)
    Aq = op.apply(q)
    obj = np.abs(op.b - Aq).reshape(P, -1).max(axis=1)

    best_q, best_obj = q.copy(), obj.copy()
    best_dual = np.full(P, -np.inf)
    iters = np.zeros(P, dtype=int)
    conv = best_obj <= atol
    act = np.flatnonzero(~conv)

    # state restricted to the active points
    a_op, a_q, a_w, a_Aq = op.subset(act), q[act], w[act], Aq[act]
    a_tau, a_sig = tau[act], sig[act]
    a_bq, a_bo, a_bd, a_tol = best_q[act], best_obj[act], best_dual[act], atol[act]
    it = 0
    while act.size and it < max_iter:
        it += 1
        ahw = a_op.adjoint(a_w)
        dual = a_op.inner(a_w, a_op.b) - radius * np.sqrt(np.sum(np.abs(ahw) ** 2, axis=qax))
        a_bd = np.maximum(a_bd, dual)
        q_new = _project_ball(a_q + a_tau * ahw, radius, qax)
        Aq_new = a_op.apply(q_new)
        o = np.abs(a_op.b - Aq_new).reshape(len(act), -1).max(axis=1)
        better = o < a_bo
        a_bo = np.where(better, o, a_bo)
        a_bq[better] = q_new[better]
        wstep = a_w + a_sig * (a_op.b - (2.0 * Aq_new - a_Aq))
        a_w = _project_l1(wstep.reshape(len(act), -1), op.weights).reshape(wstep.shape)
        a_q, a_Aq = q_new, Aq_new

        # the stopping rule is only evaluated at checkpoints, so each point's
        # iterate sequence does not depend on which other points share the batch
        if it % check_every == 0 or it == max_iter:
            done = (a_bo - a_bd <= a_tol + rtol * a_bo) | (a_bo <= a_tol)
            out = done | (it == max_iter)
            fin = act[out]
            best_q[fin], best_obj[fin], best_dual[fin] = a_bq[out], a_bo[out], a_bd[out]
            iters[fin] = it
            conv[act[done]] = True
            keep = ~out
            act = act[keep]
            a_op = a_op.subset(keep)
            a_q, a_w, a_Aq = a_q[keep], a_w[keep], a_Aq[keep]
            a_tau, a_sig = a_tau[keep], a_sig[keep]
            a_bq, a_bo, a_bd, a_tol = a_bq[keep], a_bo[keep], a_bd[keep], a_tol[keep]

    # the centre sits at patch index 4T; estimate = sum_s q_s y_{t-s}
    centre = (slice(None),) + (slice(3 * T, 5 * T + 1),) * d
    flipped = np.flip(patches[centre], axis=qax)
    estimate = np.sum(best_q * flipped, axis=qax)
    wide = np.float64 if real else np.complex128
    return {
        "q": best_q.astype(wide),
        "objective": best_obj.astype(np.float64),
        "dual": best_dual.astype(np.float64),
        "iterations": iters,
        "converged": conv,
        "estimate": estimate.astype(wide),
    }


def fit_filter(y, t, T: int, mu: float, *, max_iter: int = DEFAULT_MAX_ITER,
               atol: float = 0.0, rtol: float = DEFAULT_RTOL) -> FitReport:
    """Fit a filter on O_T to the observations around ``t``.

    The 4T-box around ``t`` must lie on the grid.  Non-convergence within
    ``max_iter`` iterations is reported through ``FitReport.converged``.
    """
    y = np.asarray(y)
    t = _as_index(t, y.ndim)
    if T < 1:
        raise GeometryError("fit_filter needs T >= 1")
    patch = extract_patches(y, np.array([t]), 4 * T)
    res = solve_batch(patch, T, mu, max_iter=max_iter, atol=atol, rtol=rtol)
    return FitReport(
        kernel=FilterKernel(res["q"][0]),
        objective=float(res["objective"][0]),
        iterations=int(res["iterations"][0]),
        converged=bool(res["converged"][0]),
        estimate=complex(res["estimate"][0]),
    )
