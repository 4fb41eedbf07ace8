"""Test signals on the grid: harmonic sums, modulated smooth signals, bumps.

All generators are pure functions of their spec (including the seed).
Signals are sampled at ``x = tau / m`` for ``tau`` in ``{0..m}^d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import GridField


def run_seed(master: int, run: int) -> np.random.SeedSequence:
    """Seed of Monte-Carlo run ``run`` under ``master``: ``SeedSequence([master, run])``."""
    return np.random.SeedSequence([int(master), int(run)])


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _coords(m: int, d: int) -> np.ndarray:
    """Grid points ``tau / m`` stacked on the last axis, shape ``(m+1,)*d + (d,)``."""
    return np.moveaxis(np.indices((m + 1,) * d, dtype=float), 0, -1) / m


def rms(s) -> float:
    return float(np.sqrt(np.mean(np.abs(np.asarray(s)) ** 2)))


@dataclass(frozen=True)
class HarmonicSumSpec:
    """Sum of ``nu`` sines with random frequencies and phases.

    ``s = alpha * sum_i sin(omega_i . tau / m + theta_i)`` with every
    coordinate of every ``omega_i`` uniform on ``[0, omega_max]`` and
    ``theta_i`` uniform on ``[0, 1]``; ``alpha`` makes the RMS equal to
    ``rms_target``.
    """

    m: int
    d: int = 2
    omega_max: float = 1.0
    nu: int = 3
    rms_target: float = 1.0
    seed: object = 0

    def __post_init__(self):
        if self.omega_max < 0:
            raise ValueError("omega_max must be >= 0")
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        if self.m < 1 or self.d < 1:
            raise ValueError("need m >= 1 and d >= 1")


@dataclass(frozen=True)
class HarmonicParams:
    omegas: np.ndarray
    thetas: np.ndarray
    alpha: float


def calibrate_snr(s, sigma_target: float) -> float:
    """Scale ``alpha`` giving ``alpha * s`` an RMS of ``sigma_target`` over the grid."""
    r = rms(s)
    if r == 0:
        raise ValueError("cannot calibrate an identically zero field")
    return sigma_target / r


def gen_harmonic_sum(spec: HarmonicSumSpec) -> tuple:
    """Returns ``(GridField, HarmonicParams)``; the field is real."""
    rng = _rng(spec.seed)
    omegas = rng.uniform(0.0, spec.omega_max, size=(spec.nu, spec.d))
    thetas = rng.uniform(0.0, 1.0, size=spec.nu)
    x = _coords(spec.m, spec.d)
    s = np.zeros((spec.m + 1,) * spec.d)
    for om, th in zip(omegas, thetas):
        s += np.sin(x @ om + th)
    alpha = calibrate_snr(s, spec.rms_target)
    return GridField(alpha * s), HarmonicParams(omegas, thetas, alpha)


@dataclass(frozen=True)
class ModulatedSmoothSpec:
    """``f(x) = sum_l g_l(x) exp(i omega(l) . x)`` on the grid.

    Envelopes are callables on arrays of points of shape ``(..., d)``; their
    smoothness order ``k`` and the bound ``R`` on their k-th derivatives are
    declared by the caller (they are the class parameters recorded with the
    field).  ``p`` is the integrability index of the class, ``inf`` for
    bounded derivatives.
    """

    m: int
    d: int
    envelopes: Sequence[Callable] = ()
    carriers: Sequence = ()
    k: int = 1
    R: float = 1.0
    p: float = math.inf

    def __post_init__(self):
        if len(self.envelopes) != len(self.carriers):
            raise ValueError("need one carrier frequency per envelope")
        if not self.envelopes:
            raise ValueError("need at least one envelope")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ClassParams:
    k: int
    p: float
    R: float


def polynomial_envelope(coeffs) -> Callable:
    """Envelope ``x -> sum_j c_j x_1^j`` in the first coordinate (d = 1 use)."""
    c = np.asarray(coeffs, dtype=complex)

    def g(x):
        return np.polyval(c[::-1], x[..., 0])

    return g


def gen_modulated_smooth(spec: ModulatedSmoothSpec) -> tuple:
    """Returns ``(GridField, ClassParams)``; the field is complex."""
    x = _coords(spec.m, spec.d)
    f = np.zeros((spec.m + 1,) * spec.d, dtype=complex)
    for g, om in zip(spec.envelopes, spec.carriers):
        om = np.broadcast_to(np.asarray(om, dtype=float), (spec.d,))
        f += g(x) * np.exp(1j * (x @ om))
    return GridField(f, kind="complex"), ClassParams(spec.k, spec.p, spec.R)


@dataclass(frozen=True)
class BumpSpec:
    """Lipschitz signal made of bumps with random signs (d = 1).

    Bumps of half-width ``width`` tile ``[0, 1]`` from a random offset.
    ``shape="hat"`` gives triangles ``+-lipschitz * width * (1 - |u|)``;
    ``shape="cosine"`` gives ``+-(2 lipschitz / pi) width (1 + cos(pi u)) / 2``.
    Here ``u`` is the offset from the centre in half-widths.  Both have
    Lipschitz constant exactly ``lipschitz``.  Cosine bumps are locally exact
    sums of exponentials, so they are much easier for filter fitting than
    hats, whose kinks are the hard part of the k = 1 class.
    """

    m: int
    width: float
    lipschitz: float = 1.0
    shape: str = "hat"
    seed: object = 0

    def __post_init__(self):
        if not 0 < self.width <= 0.5:
            raise ValueError("width must lie in (0, 0.5]")
        if self.shape not in ("hat", "cosine"):
            raise ValueError(f"unknown bump shape {self.shape!r}")


def bump_width(n: int, sigma: float = 1.0, lipschitz: float = 1.0, scale: float = 1.0) -> float:
    """Half-width ``scale (sigma^2 ln n / (L^2 n))^(1/3)`` balancing bias and noise for k = 1."""
    return min(0.5, scale * (sigma**2 * math.log(n) / (lipschitz**2 * n)) ** (1.0 / 3.0))


def gen_bumps(spec: BumpSpec) -> tuple:
    """Returns ``(GridField, ClassParams)`` with ``k = 1``, ``p = inf``, ``R = lipschitz``."""
    rng = _rng(spec.seed)
    x = np.arange(spec.m + 1) / spec.m
    w = spec.width
    offset = rng.uniform(0.0, 2 * w)
    centres = np.arange(offset - 2 * w, 1.0 + 2 * w, 2 * w)
    signs = rng.choice([-1.0, 1.0], size=len(centres))
    f = np.zeros_like(x)
    for c, sg in zip(centres, signs):
        u = (x - c) / w
        inside = np.abs(u) <= 1
        if spec.shape == "hat":
            f[inside] += sg * spec.lipschitz * w * (1 - np.abs(u[inside]))
        else:
            amp = 2.0 * spec.lipschitz * w / math.pi
            f[inside] += sg * amp * (1 + np.cos(math.pi * u[inside])) / 2
    return GridField(f), ClassParams(1, math.inf, spec.lipschitz)


def add_noise(s, sigma: float, seed=None, noise_kind: str = "real") -> np.ndarray:
    """Observations ``y = s + sigma * e`` with i.i.d. standard Gaussian ``e``.

    ``noise_kind="complex"`` draws independent N(0, 1) real and imaginary
    parts.
    """
    s = np.asarray(getattr(s, "data", s))
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if noise_kind not in ("real", "complex"):
        raise ValueError(f"unknown noise kind {noise_kind!r}")
    rng = _rng(seed)
    e = rng.standard_normal(s.shape)
    if noise_kind == "complex":
        e = e + 1j * rng.standard_normal(s.shape)
    return s + sigma * e
