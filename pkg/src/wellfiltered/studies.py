"""Ready-made studies: the harmonic-sum comparison, calibration, Theta tails, rates."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from joblib import Parallel, delayed

from .baseline import BaselineConfig, local_linear_field, select_bandwidth
from .estimator import (EstimatorConfig, _sn_ladder, adaptive_field_estimate, grid_ladder,
                        rung_estimates)
from .grid import theta_statistic
from .risk import StudySpec, gamma_mask, rate_exponents, rate_scaling_study
from .signals import BumpSpec, HarmonicSumSpec, bump_width, gen_bumps, gen_harmonic_sum

OMEGA_SWEEP = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
THETA_LEVELS = (1.0, 1.5, 2.0, 2.5, 3.0)


def adaptive_method(cfg: EstimatorConfig):
    def method(y, points, truth=None):
        fe = adaptive_field_estimate(y, cfg, points=points)
        return fe.estimate[tuple(points.T)]

    return method


def standard_method(bcfg: BaselineConfig, gamma: float):
    """Locally linear baseline; the oracle policy tunes on ``B_gamma``."""

    def method(y, points, truth=None):
        m, d = y.shape[0] - 1, y.ndim
        h = select_bandwidth(y, bcfg, truth=truth, mask=gamma_mask(m, d, gamma))
        return local_linear_field(y, h)[tuple(points.T)]

    return method


def harmonic_study(omega_max: float, cfg: EstimatorConfig, *, m: int = 128, runs: int = 100,
                   nu: int = 3, sigma: float = 1.0, master_seed: int = 0, eval_stride: int = 1,
                   bcfg: BaselineConfig | None = None, n_jobs: int = 1) -> StudySpec:
    """Standard vs adaptive recovery of 2-d harmonic sums at unit SNR."""
    bcfg = bcfg or BaselineConfig()

    def signal(rng):
        spec = HarmonicSumSpec(m=m, d=2, omega_max=omega_max, nu=nu, rms_target=sigma, seed=rng)
        return gen_harmonic_sum(spec)[0].data

    return StudySpec(
        signal=signal,
        methods={"standard": standard_method(bcfg, cfg.gamma), "adaptive": adaptive_method(cfg)},
        sigma=sigma, runs=runs, master_seed=master_seed, gamma=cfg.gamma,
        eval_stride=eval_stride, n_jobs=n_jobs,
        config={"omega_max": omega_max, "m": m, "nu": nu, "mu": cfg.mu, "c1": cfg.c1,
                "omega": cfg.omega, "max_T": cfg.max_T, "max_iter": cfg.max_iter,
                "rtol": cfg.rtol, "precision": cfg.precision,
                "baseline": f"locally linear ({bcfg.policy} bandwidth)"},
    )


def _top_rung_levels(run, m, d, cfg, master_seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), int(run)]))
    y = cfg.sigma * rng.standard_normal((m + 1,) * d)
    centre = np.full((1, d), m // 2)
    ladder, est, _ = rung_estimates(y, centre, cfg)
    sn = _sn_ladder(ladder, m, d, cfg)
    diffs = np.abs(est[0, :-1] - est[0, -1])
    return float(np.max(diffs / (4.0 * sn[:-1]))), est[0]


def rejection_levels(m: int, d: int, cfg: EstimatorConfig, runs: int, master_seed: int = 0,
                     n_jobs: int = 1) -> np.ndarray:
    """Per pure-noise run, the smallest ``C1`` keeping the top centre rung normal.

    The top rung is rejected exactly when ``C1`` is below this level, since
    normality compares ``|f_j - f_top|`` with ``4 C1 S_n(h_j)``.
    """
    cfg = replace(cfg, n_jobs=1)
    jobs = (delayed(_top_rung_levels)(j, m, d, cfg, master_seed) for j in range(runs))
    out = Parallel(n_jobs=n_jobs)(jobs) if n_jobs != 1 else [_top_rung_levels(j, m, d, cfg, master_seed)
                                                             for j in range(runs)]
    return np.array([o[0] for o in out])


def calibrate_c1(levels, rate: float = 0.05) -> float:
    """Smallest ``C1`` whose false-rejection frequency over ``levels`` is at most ``rate``."""
    lv = np.sort(np.asarray(levels))
    allowed = math.floor(rate * len(lv) + 1e-9)
    return float(lv[len(lv) - 1 - allowed])


def rejection_rate(levels, c1: float) -> float:
    return float(np.mean(np.asarray(levels) > c1))


def theta_draws(m: int, d: int, sigma: float, runs: int, master_seed: int = 0,
                policy="dyadic") -> np.ndarray:
    """Theta statistics of ``runs`` pure-noise fields."""
    out = np.empty(runs)
    for j in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), int(j)]))
        e = sigma * rng.standard_normal((m + 1,) * d)
        out[j] = theta_statistic(e, sigma=sigma, policy=policy)
    return out


def theta_exceedance(draws, n: int, levels=THETA_LEVELS) -> dict:
    """Empirical ``P(Theta > w sqrt(ln n))`` for each level ``w``."""
    draws = np.asarray(draws)
    return {w: float(np.mean(draws > w * math.sqrt(math.log(n)))) for w in levels}


def bump_rate_study(ns=(128, 256, 512, 1024, 2048, 4096), *, runs: int = 50, sigma: float = 1.0,
                    lipschitz: float = 4.0, cfg: EstimatorConfig | None = None,
                    eval_points: int = 64, master_seed: int = 0, n_jobs: int = 1):
    """Risk-versus-n study on d = 1 Lipschitz hat signals (k = 1, p = inf, q = 2).

    The bump half-width is ``(4 C1 omega)^(2/3) (sigma^2 ln n / (L^2 n))^(1/3)``:
    there a bump's height equals the normality threshold of a window of the
    same size, which is the hardest scale for the adaptive rule.  Risks are
    evaluated on about ``eval_points`` evenly spaced points of ``B_gamma``.
    """
    cfg = cfg or EstimatorConfig(max_iter=200, rtol=3e-2)
    scale = (4 * cfg.c1 * cfg.omega) ** (2.0 / 3.0)
    beta = rate_exponents(math.inf, 1, 1, 2).beta

    def make_spec(n):
        m = n
        width = bump_width(n, sigma=sigma, lipschitz=lipschitz, scale=scale)
        stride = max(1, int(round(cfg.gamma * m / eval_points)))

        def signal(rng):
            return gen_bumps(BumpSpec(m=m, width=width, lipschitz=lipschitz, seed=rng))[0].data

        return StudySpec(signal=signal, methods={"adaptive": adaptive_method(replace(cfg, sigma=sigma))},
                         sigma=sigma, runs=runs, master_seed=master_seed, gamma=cfg.gamma,
                         eval_stride=stride, q_values=(2,), n_jobs=n_jobs,
                         config={"n": n, "width": width, "lipschitz": lipschitz})

    return rate_scaling_study(list(ns), make_spec, beta, method="adaptive", q=2)


def table_rows(reports) -> list:
    """One ``(omega_max, standard, adaptive)`` row per report."""
    return [(r.config["omega_max"], r.methods["standard"].mise, r.methods["adaptive"].mise)
            for r in reports]


__all__ = [
    "OMEGA_SWEEP", "adaptive_method", "standard_method", "harmonic_study", "rejection_levels",
    "calibrate_c1", "rejection_rate", "theta_draws", "theta_exceedance", "bump_rate_study",
    "table_rows", "grid_ladder",
]
