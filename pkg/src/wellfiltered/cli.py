"""Command-line front end: field generation, denoising, studies and diagnostics.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .baseline import BaselineConfig, local_linear_field, select_bandwidth
from .estimator import EstimatorConfig, adaptive_field_estimate
from .exceptions import ConfigError
from .grid import GridField
from .io import format_config, load_config, read_field_csv, read_pgm, write_field_csv, write_pgm
from .risk import fingerprint, gamma_mask, monte_carlo
from .signals import HarmonicSumSpec, add_noise, gen_harmonic_sum, run_seed
from .studies import (OMEGA_SWEEP, THETA_LEVELS, calibrate_c1, harmonic_study, rejection_levels,
                      rejection_rate, theta_draws, theta_exceedance)

log = logging.getLogger("wellfiltered")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

SCHEMA = {
    "m": int, "d": int, "sigma": float, "mu": float, "gamma": float, "omega_max": list,
    "runs": int, "seed": int, "threads": int, "verbose": bool, "c1": float, "omega": float,
    "nu": int, "max_T": int, "max_iter": int, "rtol": float, "precision": str,
    "ladder_ratio": float, "baseline": str, "eval_stride": int, "bits": int, "panels": bool,
    "policy": str, "rate": float, "format": str,
}

_SOLVER = {"mu": 1.0, "c1": 0.5, "omega": 2.0, "gamma": 0.5, "ladder_ratio": 1.5, "max_T": -1,
           "max_iter": 100, "rtol": 3e-2, "precision": "single"}

DEFAULTS = {
    "generate": {"m": 128, "d": 2, "sigma": 1.0, "omega_max": [8.0], "nu": 3, "seed": 0,
                 "format": "csv", "bits": 8},
    "denoise": {"sigma": 1.0, "format": "", "bits": 8, **_SOLVER},
    "table1": {"m": 128, "sigma": 1.0, "omega_max": list(OMEGA_SWEEP), "nu": 3, "runs": 100,
               "seed": 0, "baseline": "oracle", "eval_stride": 1, "panels": True, "bits": 8,
               **_SOLVER},
    "theta-diag": {"m": 64, "d": 1, "sigma": 1.0, "runs": 500, "seed": 0, "policy": "dyadic"},
    "calibrate": {"m": 128, "d": 2, "sigma": 1.0, "runs": 200, "seed": 0, "rate": 0.05, **_SOLVER},
}

# keys that never change results, hence are left out of fingerprints
_NEUTRAL = ("threads", "verbose")


@dataclass
class StudyConfig:
    """Resolved settings of one invocation: defaults < config file < flags."""

    command: str
    values: dict
    out: Path
    threads: int = 1
    verbose: bool = False

    def __getitem__(self, key):
        return self.values[key]

    @property
    def fingerprint(self) -> str:
        return fingerprint({"command": self.command,
                            **{k: v for k, v in self.values.items() if k not in _NEUTRAL}})

    def estimator(self, sigma=None) -> EstimatorConfig:
        v = self.values
        return EstimatorConfig(mu=v["mu"], gamma=v["gamma"], omega=v["omega"], c1=v["c1"],
                               ladder_ratio=v["ladder_ratio"],
                               sigma=v["sigma"] if sigma is None else sigma,
                               max_T=None if v["max_T"] < 0 else v["max_T"],
                               max_iter=v["max_iter"], rtol=v["rtol"], precision=v["precision"])


def resolve(command: str, args: argparse.Namespace) -> StudyConfig:
    values = dict(DEFAULTS[command])
    if args.config:
        try:
            from_file = load_config(args.config, SCHEMA)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        values.update(from_file)
    flags = {"m": args.m, "sigma": args.sigma, "mu": args.mu, "gamma": args.gamma,
             "omega_max": args.omega_max, "runs": args.runs, "seed": args.seed,
             "threads": args.threads}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.verbose:
        values["verbose"] = True
    if isinstance(values.get("omega_max"), (int, float)):
        values["omega_max"] = [float(values["omega_max"])]
    for key in ("m", "runs", "d", "nu"):
        if key in values and values[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if values.get("sigma", 0) < 0:
        raise ConfigError("sigma must be >= 0")
    threads = int(values.pop("threads", 1))
    verbose = bool(values.pop("verbose", False))
    return StudyConfig(command, values, Path(args.out), threads=threads, verbose=verbose)


def _csv_text(cfg: StudyConfig, units: str, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# fingerprint={cfg.fingerprint}; {units}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _read_field(path: Path):
    """Returns ``(GridField, pgm mapping or None)``."""
    if not path.exists():
        raise OSError(f"no such file: {path}")
    if path.suffix.lower() == ".pgm":
        values, mapping = read_pgm(path)
        if values.shape[0] != values.shape[1]:
            raise ValueError(f"{path}: fields live on square grids, got {values.shape}")
        return GridField(values), mapping
    return read_field_csv(path), None


def cmd_generate(cfg: StudyConfig) -> int:
    """Harmonic-sum truth and a noisy observation."""
    m, d = cfg["m"], cfg["d"]
    seq = run_seed(cfg["seed"], 0)
    s_seed, n_seed = seq.spawn(2)
    spec = HarmonicSumSpec(m=m, d=d, omega_max=cfg["omega_max"][0], nu=cfg["nu"],
                           rms_target=cfg["sigma"] if cfg["sigma"] > 0 else 1.0,
                           seed=np.random.default_rng(s_seed))
    truth, params = gen_harmonic_sum(spec)
    obs = GridField(add_noise(truth, cfg["sigma"], np.random.default_rng(n_seed)))
    note = [f"fingerprint={cfg.fingerprint}", "units: signal units (noise sigma = "
            f"{cfg['sigma']!r})", f"omegas={params.omegas.tolist()}", f"thetas={params.thetas.tolist()}",
            f"alpha={params.alpha!r}"]
    if cfg["format"] == "pgm":
        if d != 2:
            raise ConfigError("PGM output needs d = 2")
        lo, hi = float(obs.data.min()), float(obs.data.max())
        write_pgm(cfg.out / "truth.pgm", truth.data, cfg["bits"], lo, hi)
        write_pgm(cfg.out / "observation.pgm", obs.data, cfg["bits"], lo, hi)
    elif cfg["format"] == "csv":
        write_field_csv(cfg.out / "truth.csv", truth, note)
        write_field_csv(cfg.out / "observation.csv", obs, note)
    else:
        raise ConfigError(f"unknown format {cfg['format']!r}")
    return EXIT_OK


def cmd_denoise(cfg: StudyConfig, input_path: Path, output: str | None = None) -> int:
    """Adaptive estimate of an observed field; diagnostics CSV with ``--verbose``."""
    try:
        fld, mapping = _read_field(input_path)
    except (OSError, ValueError) as exc:
        log.error("cannot read %s: %s", input_path, exc)
        return EXIT_IO
    est_cfg = replace(cfg.estimator(), n_jobs=cfg.threads)
    if fld.m < 2:
        raise ConfigError("need m >= 2 to have interior points")
    fe = adaptive_field_estimate(fld.data, est_cfg)
    if not np.all(np.isfinite(fe.estimate)):
        raise FloatingPointError("non-finite estimate")
    fmt = cfg["format"] or ("pgm" if input_path.suffix.lower() == ".pgm" else "csv")
    name = output or f"{input_path.stem}_denoised.{fmt}"
    out = cfg.out / name
    if fmt == "pgm":
        if fld.d != 2 or fld.kind != "real":
            raise ConfigError("PGM output needs a real 2-d field")
        if mapping is not None:
            lo, hi = mapping["offset"], mapping["offset"] + mapping["maxval"] / mapping["scale"]
        else:
            lo, hi = float(fld.data.min()), float(fld.data.max())
        bits = 16 if (mapping and mapping["maxval"] > 255) else cfg["bits"]
        write_pgm(out, fe.estimate, bits, lo, hi)
    else:
        kind = "complex" if np.iscomplexobj(fe.estimate) else "real"
        write_field_csv(out, GridField(fe.estimate, kind=kind),
                        [f"fingerprint={cfg.fingerprint}", "units: same as input"])
    log.info("wrote %s", out)
    if cfg.verbose:
        K = len(fe.ladder)
        header = (["point", "chosen_T"] + [f"objective_T{T}" for T in fe.ladder]
                  + [f"normal_T{T}" for T in fe.ladder])
        rows = []
        for i, p in enumerate(fe.points):
            rows.append([" ".join(map(str, p)), int(fe.chosen_T[tuple(p)])]
                        + [_fmt(fe.objectives[i, k]) for k in range(K)]
                        + [int(fe.normal[i, k]) for k in range(K)])
        _write(out.with_name(out.stem + "_diagnostics.csv"),
               _csv_text(cfg, "objectives in input units; normal bits 0/1", header, rows))
    return EXIT_OK


def _panels(cfg: StudyConfig, omega_max: float, est_cfg: EstimatorConfig, bcfg: BaselineConfig):
    """Truth, observation, standard and adaptive fields of run 0."""
    m = cfg["m"]
    s_seed, n_seed = run_seed(cfg["seed"], 0).spawn(2)
    spec = HarmonicSumSpec(m=m, d=2, omega_max=omega_max, nu=cfg["nu"], rms_target=cfg["sigma"],
                           seed=np.random.default_rng(s_seed))
    truth = gen_harmonic_sum(spec)[0].data
    y = truth + cfg["sigma"] * np.random.default_rng(n_seed).standard_normal(truth.shape)
    h = select_bandwidth(y, bcfg, truth=truth, mask=gamma_mask(m, 2, est_cfg.gamma))
    standard = local_linear_field(y, h)
    adaptive = adaptive_field_estimate(y, replace(est_cfg, n_jobs=cfg.threads)).estimate
    return {"truth": truth, "observation": y, "standard": standard, "adaptive": adaptive}


def cmd_table1(cfg: StudyConfig) -> int:
    """Standard vs adaptive MISE over the omega_max sweep, plus image panels."""
    est_cfg = cfg.estimator()
    bcfg = BaselineConfig(policy=cfg["baseline"])
    rows, reports = [], []
    for om in cfg["omega_max"]:
        spec = harmonic_study(om, est_cfg, m=cfg["m"], runs=cfg["runs"], nu=cfg["nu"],
                              sigma=cfg["sigma"], master_seed=cfg["seed"],
                              eval_stride=cfg["eval_stride"], bcfg=bcfg, n_jobs=cfg.threads)
        rep = monte_carlo(spec)
        reports.append(rep)
        st, ad = rep.methods["standard"], rep.methods["adaptive"]
        notes = "; ".join(f"{name}: {len(r.failures)} failed run(s)"
                          for name, r in rep.methods.items() if r.failures)
        rows.append([_fmt(om), _fmt(st.mise), _fmt(ad.mise), st.runs, ad.runs, notes or "ok"])
        log.info("omega_max=%g standard=%.4f adaptive=%.4f (%.1fs)", om, st.mise, ad.mise,
                 rep.wall_time)
        if cfg["panels"]:
            panels = _panels(cfg, om, est_cfg, bcfg)
            lo, hi = float(panels["observation"].min()), float(panels["observation"].max())
            for name, arr in panels.items():
                write_pgm(cfg.out / f"omega{om:g}_{name}.pgm", arr, cfg["bits"], lo, hi)
    _write(cfg.out / "table1.csv",
           _csv_text(cfg, "MISE in signal units (unit noise sigma)",
                     ["omega_max", "standard_mise", "adaptive_mise", "standard_runs",
                      "adaptive_runs", "notes"], rows))
    (cfg.out / "table1.json").write_text(json.dumps(
        {"fingerprint": cfg.fingerprint, "config": cfg.values,
         "studies": [r.to_json() for r in reports]}, indent=2, default=str))
    failed = all(r.methods["adaptive"].runs == 0 for r in reports)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_theta_diag(cfg: StudyConfig) -> int:
    """Monte-Carlo draws of the noise statistic and its tail frequencies."""
    m, d = cfg["m"], cfg["d"]
    if cfg["sigma"] <= 0:
        raise ConfigError("theta-diag needs sigma > 0")
    draws = theta_draws(m, d, cfg["sigma"], cfg["runs"], cfg["seed"], policy=cfg["policy"])
    n = m**d
    _write(cfg.out / "theta_samples.csv",
           _csv_text(cfg, "theta is dimensionless (noise / sigma)", ["run", "theta"],
                     [[j, _fmt(v)] for j, v in enumerate(draws)]))
    tail = theta_exceedance(draws, n, THETA_LEVELS)
    _write(cfg.out / "theta_tail.csv",
           _csv_text(cfg, "frequency of theta > w sqrt(ln n)", ["w", "threshold", "exceedance"],
                     [[_fmt(w), _fmt(w * math.sqrt(math.log(n))), _fmt(p)] for w, p in tail.items()]))
    for w, p in tail.items():
        log.info("P(theta > %g sqrt(ln n)) = %.4f", w, p)
    return EXIT_OK


def cmd_calibrate(cfg: StudyConfig) -> int:
    """Smallest C1 with pure-noise false rejection of the top rung at most ``rate``."""
    if cfg["sigma"] <= 0:
        raise ConfigError("calibrate needs sigma > 0")
    est_cfg = cfg.estimator()
    levels = rejection_levels(cfg["m"], cfg["d"], est_cfg, cfg["runs"], cfg["seed"],
                              n_jobs=cfg.threads)
    if not np.all(np.isfinite(levels)):
        raise FloatingPointError("non-finite rejection levels")
    c1 = calibrate_c1(levels, cfg["rate"])
    _write(cfg.out / "calibration_levels.csv",
           _csv_text(cfg, "levels in units of C1", ["run", "level"],
                     [[j, _fmt(v)] for j, v in enumerate(levels)]))
    snippet = (f"# smallest C1 with top-rung false rejection <= {cfg['rate']:g} "
               f"(m = {cfg['m']}, d = {cfg['d']}, sigma = {cfg['sigma']:g}, {cfg['runs']} runs; "
               f"observed rate {rejection_rate(levels, c1):.4f})\n"
               + format_config({"c1": c1, "omega": est_cfg.omega}))
    _write(cfg.out / "calibration.cfg", snippet)
    print(snippet, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--m", type=int, help="grid size (points per axis minus one)")
    common.add_argument("--sigma", type=float, help="noise level")
    common.add_argument("--mu", type=float, help="filter norm bound factor")
    common.add_argument("--gamma", type=float, help="shrinkage of the risk region")
    common.add_argument("--omega-max", type=float, nargs="+", help="frequency bound(s)")
    common.add_argument("--runs", type=int, help="Monte-Carlo runs / draws")
    common.add_argument("--threads", type=int, help="parallel workers")
    common.add_argument("--verbose", action="store_true", help="progress and diagnostics")

    parser = argparse.ArgumentParser(prog="wellfiltered", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="harmonic-sum truth and observation")
    p = sub.add_parser("denoise", parents=[common], help="adaptive estimate of a field file")
    p.add_argument("input", help="CSV or PGM field")
    p.add_argument("--output", help="output file name inside --out")
    sub.add_parser("table1", parents=[common], help="standard vs adaptive MISE sweep")
    sub.add_parser("theta-diag", parents=[common], help="noise statistic tail frequencies")
    sub.add_parser("calibrate", parents=[common], help="calibrate C1 on pure noise")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args.command, args)
        try:
            cfg.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            log.error("cannot create output directory: %s", exc)
            return EXIT_IO
        if args.command == "denoise":
            return cmd_denoise(cfg, Path(args.input), args.output)
        handler = {"generate": cmd_generate, "table1": cmd_table1,
                   "theta-diag": cmd_theta_diag, "calibrate": cmd_calibrate}[args.command]
        return handler(cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
