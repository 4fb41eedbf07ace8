"""Risk metrics, rate exponents and the Monte-Carlo study engine."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

from .grid import Cube, discrete_lq_norm, shrink_cube, unit_cube


def mise(estimates, truths, mask=None) -> float:
    """Root of the run- and point-averaged squared error.

    ``estimates`` and ``truths`` are sequences of fields (or stacked arrays)
    of equal shapes; ``mask`` restricts the average to a set of grid points.
    """
    est = np.asarray(estimates)
    tru = np.asarray(truths)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
    err = np.abs(est - tru) ** 2
    if mask is not None:
        err = err[..., np.asarray(mask, dtype=bool)]
    return float(np.sqrt(np.mean(err)))


def gamma_mask(m: int, d: int, gamma: float, B: Cube | None = None) -> np.ndarray:
    """Boolean mask of ``Z(B_gamma)``, ``B`` defaulting to the unit cube."""
    cube = shrink_cube(B or unit_cube(d), gamma)
    mask = np.zeros((m + 1,) * d, dtype=bool)
    mask[cube.slices(m)] = True
    return mask


def lq_risk(f_hat, f, q: float, B: Cube | None = None, gamma: float = 0.5) -> float:
    """``|f_hat - f|_{q, B_gamma}`` (discrete norm on the shrunk cube)."""
    e = np.asarray(f_hat) - np.asarray(f)
    cube = shrink_cube(B or unit_cube(e.ndim), gamma)
    return discrete_lq_norm(e, q, cube)


@dataclass(frozen=True)
class RateExponents:
    beta: float
    lam: float


def rate_exponents(p: float, k: float, d: int, q: float) -> RateExponents:
    """Exponents of the risk bound ``(sigma^2 ln n / (R^2 n))^beta D(B)^(d lambda)``.

    The boundary ``q = (2k+d) p / d`` belongs to the first branch.
    """
    if not p > d:
        raise ValueError("need p > d")
    if k < 1 or not q >= 1:
        raise ValueError("need k >= 1 and q >= 1")
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    split = math.inf if math.isinf(p) else (2 * k + d) * p / d
    if q <= split:
        return RateExponents(k / (2 * k + d), inv_q - d * inv_p / (2 * k + d))
    return RateExponents((k + d * (inv_q - inv_p)) / (2 * k + d - 2 * d * inv_p), 0.0)


def fingerprint(config: Mapping) -> str:
    """Short hash of a configuration (canonical JSON, sorted keys)."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class MethodRisk:
    mise: float
    lq: dict
    max_lq: dict
    runs: int
    failures: list = field(default_factory=list)


@dataclass
class RiskReport:
    """Risks of several methods on one study configuration.

    ``lq`` holds the root-mean-square over runs of the per-run discrete
    ``l_q`` risk on ``B_gamma``; ``max_lq`` the largest per-run value
    (the empirical max risk over the drawn signals, not a minimax risk).
    """

    config: dict
    methods: dict
    seeds: list
    wall_time: float = 0.0

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.config)

    def to_rows(self) -> list:
        rows = []
        for name, r in self.methods.items():
            row = {"method": name, **{k: self.config[k] for k in sorted(self.config)}}
            row["mise"] = r.mise
            for q, v in r.lq.items():
                row[f"lq_{q}"] = v
                row[f"max_lq_{q}"] = r.max_lq[q]
            row["runs"] = r.runs
            row["failures"] = len(r.failures)
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        rows = self.to_rows()
        buf = io.StringIO()
        buf.write(f"# fingerprint={self.fingerprint}; risks in signal units\n")
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "fingerprint": self.fingerprint,
            "seeds": self.seeds,
            "wall_time": self.wall_time,
            "methods": {
                name: {"mise": r.mise, "lq": {str(q): v for q, v in r.lq.items()},
                       "max_lq": {str(q): v for q, v in r.max_lq.items()},
                       "runs": r.runs, "failures": r.failures}
                for name, r in self.methods.items()
            },
        }


@dataclass
class StudySpec:
    """A Monte-Carlo study.

    Parameters
    ----------
    signal : callable
        ``signal(rng) -> truth`` drawing the signal of one run.
    methods : dict
        ``name -> method(y, points, truth) -> values at points``; ``truth``
        is passed for oracle-tuned methods only and must not be used
        otherwise.
    sigma : float
        Noise level; the noise is real Gaussian.
    runs : int
        Number of independent runs.
    master_seed : int
        Run ``j`` uses ``SeedSequence([master_seed, j])``.
    gamma : float
        Risks are measured on ``B_gamma`` of the unit cube.
    eval_stride : int
        Evaluate on every ``eval_stride``-th point of ``Z(B_gamma)`` per axis.
    q_values : sequence
        Orders of the ``l_q`` risks.
    """

    signal: Callable
    methods: dict
    sigma: float = 1.0
    runs: int = 100
    master_seed: int = 0
    gamma: float = 0.5
    eval_stride: int = 1
    q_values: Sequence = (2, math.inf)
    n_jobs: int = 1
    config: dict = field(default_factory=dict)


def _eval_points(m, d, gamma, stride):
    mask = gamma_mask(m, d, gamma)
    sub = np.zeros_like(mask)
    lo = np.argwhere(mask).min(axis=0)
    sl = tuple(slice(a, None, stride) for a in lo)
    sub[sl] = mask[sl]
    return np.argwhere(sub), mask


def _lq_on_points(err, q, m, d, count_full):
    # discrete norm on Z(B_gamma), estimated from the evaluated points
    a = np.abs(err)
    if math.isinf(q):
        return float(a.max())
    return float((np.mean(a**q) * count_full) ** (1.0 / q) * m ** (-d / q))


def _one_run(spec: StudySpec, run: int):
    seq = np.random.SeedSequence([int(spec.master_seed), int(run)])
    s_seed, n_seed = seq.spawn(2)
    truth = np.asarray(spec.signal(np.random.default_rng(s_seed)))
    m, d = truth.shape[0] - 1, truth.ndim
    y = truth + spec.sigma * np.random.default_rng(n_seed).standard_normal(truth.shape)
    pts, mask = _eval_points(m, d, spec.gamma, spec.eval_stride)
    t_vals = truth[tuple(pts.T)]
    out = {}
    for name, method in spec.methods.items():
        try:
            vals = np.asarray(method(y, pts, truth))
            err = vals - t_vals
            if not np.all(np.isfinite(err)):
                raise FloatingPointError("non-finite estimate")
            out[name] = {
                "sq": float(np.mean(np.abs(err) ** 2)),
                "lq": {q: _lq_on_points(err, q, m, d, int(mask.sum())) for q in spec.q_values},
            }
        except Exception as exc:  # a failing method never aborts the study
            out[name] = {"error": f"{type(exc).__name__}: {exc}",
                         "trace": traceback.format_exc(limit=2)}
    return out


def monte_carlo(spec: StudySpec) -> RiskReport:
    """Run the study; the report is independent of ``n_jobs``."""
    start = time.perf_counter()
    if spec.n_jobs == 1:
        results = [_one_run(spec, j) for j in range(spec.runs)]
    else:
        results = Parallel(n_jobs=spec.n_jobs)(delayed(_one_run)(spec, j) for j in range(spec.runs))
    methods = {}
    for name in spec.methods:
        sq, lq, fails = [], {q: [] for q in spec.q_values}, []
        for j, res in enumerate(results):  # fixed reduction order: run index
            r = res[name]
            if "error" in r:
                fails.append({"run": j, "error": r["error"]})
                continue
            sq.append(r["sq"])
            for q in spec.q_values:
                lq[q].append(r["lq"][q])
        ok = len(sq)
        methods[name] = MethodRisk(
            mise=float(np.sqrt(np.mean(sq))) if ok else math.nan,
            lq={q: float(np.sqrt(np.mean(np.square(v)))) if ok else math.nan for q, v in lq.items()},
            max_lq={q: float(np.max(v)) if ok else math.nan for q, v in lq.items()},
            runs=ok,
            failures=fails,
        )
    config = {"sigma": spec.sigma, "runs": spec.runs, "master_seed": spec.master_seed,
              "gamma": spec.gamma, "eval_stride": spec.eval_stride, **spec.config}
    return RiskReport(config=config, methods=methods,
                      seeds=[[spec.master_seed, j] for j in range(spec.runs)],
                      wall_time=time.perf_counter() - start)


@dataclass
class RateReport:
    ns: list
    risks: list
    slope: float
    beta: float
    status: str
    reports: list = field(default_factory=list)

    @property
    def deviation(self) -> float:
        return abs(self.slope - self.beta)


def rate_scaling_study(ns: Sequence[int], make_spec: Callable, beta: float,
                       method: str = "adaptive", q: float = 2) -> RateReport:
    """Fit the slope of log risk against ``log(sigma^2 ln n / n)``.

    ``make_spec(n)`` returns the :class:`StudySpec` for sample size ``n``
    (grid with ``m = n^(1/d)``).  The risk is the ``l_q`` risk of ``method``.
    """
    if len(ns) < 4:
        raise ValueError("need at least four sample sizes")
    reports, risks, xs = [], [], []
    for n in ns:
        spec = make_spec(n)
        rep = monte_carlo(spec)
        reports.append(rep)
        risks.append(rep.methods[method].lq[q])
        xs.append(spec.sigma**2 * math.log(n) / n)
    if any(r <= 1e-12 for r in risks) or xs[0] == 0:
        return RateReport(list(ns), risks, math.nan, beta, "skipped: risks at the numerical floor", reports)
    slope = float(np.polyfit(np.log(xs), np.log(risks), 1)[0])
    return RateReport(list(ns), risks, slope, beta, "ok", reports)
