"""Command-line interface: estimate, simulate, pivot-check, report.

Input CSV schema for ``estimate``: header exactly ``area_id,y,D,x1[,x2,...]``.
The ``--alpha`` flag is the nominal coverage level (0.95 means a 95%
interval).  Diagnostics go to stderr; data goes to the output file, or to
stdout under ``--stdout``.

Exit codes: 0 success, 1 input/parse error, 2 rank-deficient design,
3 unknown configuration keys, 4 invalid linking hyperparameter.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, db_interval, hm_interval, sb_distribution, sb_interval
from .errors import ConfigFileError, SingularDesignError
from .estimators import fh_objective, fit_model, leverage, mspe
from .harness import PROFILES, ScenarioConfig, compare_reports, run_scenario
from .intervals import direct_interval, traditional_interval
from .model import LinkingDistribution
from .pivot import pivot_scan

log = logging.getLogger("saeboot")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SINGULAR = 2
EXIT_BAD_CONFIG_KEYS = 3
EXIT_BAD_PHI = 4


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def read_area_dataset(path: str):
    """Parse an area-level CSV; returns (area_ids, y, D, X)."""
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header[:3] != ["area_id", "y", "D"] or not all(
            h == f"x{i + 1}" for i, h in enumerate(header[3:])
        ):
            raise ValueError(f"{path}:1: header must be area_id,y,D,x1[,x2,...], got {header}")
        p = max(1, len(header) - 3)
        has_x = len(header) > 3
        ids, ys, Ds, xs = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ys.append(float(row[1]))
                Ds.append(float(row[2]))
                xs.append([float(v) for v in row[3:]] if has_x else [1.0])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            ids.append(row[0])
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate area_id values")
    y = np.asarray(ys)
    D = np.asarray(Ds)
    X = np.asarray(xs)
    if np.any(D <= 0):
        raise ValueError(f"{path}: all D values must be > 0")
    if len(ids) <= p:
        raise ValueError(f"{path}: need more areas than covariates (m={len(ids)}, p={p})")
    return ids, y, D, X


def cmd_estimate(args) -> int:
    ids, y, D, X = read_area_dataset(args.data_file)
    alpha = 1.0 - args.alpha  # flag is the coverage level
    G = LinkingDistribution(family=args.family, phi=args.phi)
    estimator = args.estimator.upper()

    h = leverage(X)
    m, p = X.shape
    if h.max() > 5.0 * p / m:
        log.warning(
            "high-leverage design: max h_ii = %.3f exceeds 5 p/m = %.3f; "
            "asymptotic calibration may be unreliable",
            h.max(),
            5.0 * p / m,
        )

    if args.method == "direct":
        ivs = [direct_interval(y[i], D[i], alpha, area_index=i) for i in range(len(ids))]
        centre, scale_sq = y, D
    else:
        fit = fit_model(X, y, D, method=estimator)
        if estimator == "FH":
            log.info(
                "FH fit: A_hat=%.6g |f(A_hat)|=%.3g truncated=%s",
                fit.A_hat,
                abs(fh_objective(fit.A_hat, X, y, D)),
                fit.was_truncated,
            )
        else:
            log.info("PR fit: A_hat=%.6g truncated=%s", fit.A_hat, fit.was_truncated)
        cfg = BootstrapConfig(B1=args.B1, B2=args.B2, estimator=estimator, seed=args.seed)
        if args.method == "trad":
            ivs = traditional_interval(fit, mspe(fit, X, D), alpha)
        elif args.method == "sb":
            ivs = sb_interval(sb_distribution(X, y, D, G, cfg, fit=fit), fit, alpha)
        elif args.method == "hm":
            ivs = hm_interval(X, y, D, G, cfg, alpha, fit=fit)
        else:
            ivs = db_interval(X, y, D, G, cfg, alpha, fit=fit)
        centre = fit.synthetic(X) if args.method == "hm" else fit.eblup
        scale_sq = fit.g1_hat

    lines = ["area_id,theta_hat,g1_hat,lower,upper,method,alpha"]
    for i, iv in enumerate(ivs):
        lines.append(
            f"{ids[i]},{_fmt(centre[i])},{_fmt(scale_sq[i])},{_fmt(iv.lower)},"
            f"{_fmt(iv.upper)},{iv.method},{_fmt(args.alpha)}"
        )
    text = "\n".join(lines) + "\n"
    if args.stdout:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        log.info("wrote %d rows to %s", len(ivs), args.out)
    return EXIT_OK


_CONFIG_KEYS = {f.name for f in dataclasses.fields(ScenarioConfig)} | {"profile"}


def load_scenario_config(path: str) -> tuple[ScenarioConfig, str | None]:
    """Read a flat JSON scenario config; unknown keys are fatal."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigFileError(f"{path}: config must be a flat JSON object")
    unknown = sorted(set(raw) - _CONFIG_KEYS)
    if unknown:
        raise ConfigFileError(f"{path}: unknown configuration keys: {', '.join(unknown)}", unknown)
    profile = raw.pop("profile", None)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigFileError(f"{path}: unknown profile {profile!r}", ["profile"])
        for key, value in PROFILES[profile].items():
            raw.setdefault(key, value)
    if "family" in raw:
        # a config that names a family owns its hyperparameter; without this
        # the t9 default phi would leak into other families
        raw.setdefault("phi", None)
    for key in ("pattern", "beta", "alphas", "methods"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(raw[key])
    return ScenarioConfig(**raw), profile


def cmd_simulate(args) -> int:
    config, profile = load_scenario_config(args.config_file)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.info("scenario: m=%d pattern=%s family=%s n_sims=%d B1=%d B2=%d methods=%s",
             config.m, config.pattern_name, config.family, config.n_sims, config.B1,
             config.B2, ",".join(config.methods))
    t0 = time.perf_counter()
    report = run_scenario(config)
    (out_dir / "report.csv").write_text(report.to_csv())
    manifest = {
        "version": __version__,
        "profile": profile,
        "config": {
            **dataclasses.asdict(config),
            "pattern": config.pattern_name
            if isinstance(config.pattern, str)
            else list(config.pattern),
        },
        "seed": config.seed,
        "negative_A_pct": report.negative_rates,
        "wall_seconds": report.wall_seconds,
        "total_seconds": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("wrote %s and %s", out_dir / "report.csv", out_dir / "manifest.json")
    rc = EXIT_OK
    for ref in args.check or []:
        result = compare_reports(report, ref)
        sys.stderr.write(f"check against {ref}:\n{result}\n")
        if not result.passed:
            rc = EXIT_ERROR
    return rc


def cmd_pivot_check(args) -> int:
    try:
        G = LinkingDistribution(family=args.family, phi=args.phi)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_BAD_PHI
    grid = [float(v) for v in args.A.split(",")]
    report = pivot_scan(G, args.D, grid, tol=args.tol)
    print(f"family={G.family} phi={G.phi} D={args.D:g}")
    print(f"{'A':>10s} {'fourth_moment':>14s} {'third_moment':>13s}")
    for a, m4, m3 in zip(report.A_grid, report.fourth_moments, report.third_moments):
        print(f"{a:10.4g} {m4:14.6f} {m3:13.6f}")
    print(f"max moment spread over grid: {report.max_spread:.6g}")
    print(f"claim: {report.claim}")
    if args.csv:
        lines = ["A,D,fourth_moment,third_moment,claim"]
        for a, m4, m3 in zip(report.A_grid, report.fourth_moments, report.third_moments):
            lines.append(f"{_fmt(a)},{_fmt(args.D)},{_fmt(m4)},{_fmt(m3)},{report.claim}")
        Path(args.csv).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    import csv as _csv

    with open(args.report_csv, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{args.report_csv}: empty report")
    methods = list(dict.fromkeys(r["method"] for r in rows))
    alphas = sorted({float(r["alpha"]) for r in rows})
    groups = sorted({r["group"] for r in rows})
    cell = {
        (r["method"], float(r["alpha"]), r["group"]): (
            float(r["coverage_pct"]),
            float(r["avg_length"]),
        )
        for r in rows
    }
    width = max(16, max(len(m) for m in methods) + 2)
    print("Coverage probabilities (average length)")
    for a in alphas:
        print(f"\nnominal coverage = {a:g}%")
        print("     " + "".join(f"{m:>{width}s}" for m in methods))
        for g in groups:
            cells = []
            for m in methods:
                cov, ln = cell.get((m, a, g), (float("nan"), float("nan")))
                cells.append(f"{cov:6.2f} ( {ln:5.2f} )".rjust(width))
            print(f"{g:>4s} " + "".join(cells))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saeboot",
        description="Bootstrap-calibrated prediction intervals for small-area means",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="interval estimates for an area-level CSV")
    est.add_argument("data_file")
    est.add_argument("--method", choices=["direct", "trad", "sb", "hm", "db"], default="sb")
    est.add_argument("--estimator", choices=["fh", "pr"], default="fh")
    est.add_argument("--alpha", type=float, default=0.95, help="nominal coverage level")
    est.add_argument("--family", default="normal", help="linking family (normal, t, se, logistic)")
    est.add_argument("--phi", type=float, default=None, help="family hyperparameter (t: dof)")
    est.add_argument("--B1", type=int, default=400)
    est.add_argument("--B2", type=int, default=100)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", default="intervals.csv")
    est.add_argument("--stdout", action="store_true", help="write data to stdout instead")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    sim.add_argument("config_file")
    sim.add_argument("out_dir")
    sim.add_argument("--check", action="append", metavar="REFERENCE_CSV",
                     help="compare the report against a reference extract (repeatable)")
    sim.set_defaults(func=cmd_simulate)

    piv = sub.add_parser("pivot-check", help="moment-based non-pivot scan")
    piv.add_argument("--family", required=True)
    piv.add_argument("--phi", type=float, default=None)
    piv.add_argument("--D", type=float, required=True)
    piv.add_argument("--A", required=True, help="comma-separated grid of A values")
    piv.add_argument("--tol", type=float, default=1e-6)
    piv.add_argument("--csv", default=None, help="also write the grid to this CSV")
    piv.set_defaults(func=cmd_pivot_check)

    rep = sub.add_parser("report", help="format a report CSV as an aligned table")
    rep.add_argument("report_csv")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigFileError as exc:
        log.error("%s", exc)
        return EXIT_BAD_CONFIG_KEYS if exc.unknown_keys else EXIT_ERROR
    except SingularDesignError as exc:
        log.error("singular design: %s", exc)
        return EXIT_SINGULAR
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
