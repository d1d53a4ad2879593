"""Command-line entry point: ``mvfuse <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .debias import DebiasedFit, fit_equations
from .fuse import FuseConfig, cross_validate
from .grid import GridSpec, run_grid, write_rows_csv, write_summary_json
from .inference import TestReport, benjamini_hochberg
from .legacy import legacy_fit
from .metrics import score_estimation, score_tests
from .panel import (NumericalError, PathDecomposition, StudyConfig, ValidationError, lagged_design, load_study,
                    save_study)
from .pipeline import fit_study, run_tests
from .synth import SimTruth, draw_design, generate

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x for x in text.split(",") if x)


def _write_json(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2))
    return path


def _write_dict_csv(rows: list[dict], path: Path) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_fits(path) -> list[DebiasedFit]:
    obj = json.loads(Path(path).read_text())
    return [DebiasedFit.from_dict(f) for f in obj["fits"]]


def _fits_for(args, panels, config) -> list[DebiasedFit]:
    if getattr(args, "fits", None):
        fits = _load_fits(args.fits)
        if len(fits) != len(panels):
            raise ValidationError(f"{len(fits)} stored fits for {len(panels)} subjects")
        return fits
    return fit_study(panels, config)


def cmd_simulate(args) -> list[Path]:
    design = draw_design(args.preset, args.d, args.K, args.mean_T, args.seed, args.p)
    panels, truth = generate(design)
    out = _out(args)
    manifest = save_study(panels, StudyConfig(p=args.p, K=args.K, seed=args.seed), out)
    truth_path = out / "truth.json"
    truth.save(truth_path)
    return [manifest, truth_path]


def cmd_fit(args) -> list[Path]:
    panels, config = load_study(args.manifest)
    out = _out(args)
    if args.emit_debiased:
        fits = fit_study(panels, config)
        return [_write_json({"fits": [f.to_dict() for f in fits]}, out / "fits.json")]
    entries = []
    for panel in panels:
        Y, X = lagged_design(panel.data, config.p, config.center)
        beta_hat, lambdas = fit_equations(X, Y)
        entries.append({"subject_id": panel.subject_id, "beta_hat": beta_hat.tolist(),
                        "lambdas": lambdas.tolist()})
    return [_write_json({"lasso": entries}, out / "lasso.json")]


def _write_decomposition(decomp: PathDecomposition, panels, out: Path, fmt: str, stem: str) -> list[Path]:
    paths = [_write_json(decomp.to_dict(), out / f"{stem}.json")]
    if fmt == "csv":
        dp = decomp.d * decomp.p
        common = decomp.common_sparse.reshape(decomp.d, dp)
        np.savetxt(out / f"{stem}_common.csv", common, delimiter=",", fmt="%.17g")
        paths.append(out / f"{stem}_common.csv")
        for panel, unique in zip(panels, decomp.unique_sparse):
            path = out / f"{stem}_unique_{panel.subject_id}.csv"
            np.savetxt(path, unique.reshape(decomp.d, dp), delimiter=",", fmt="%.17g")
            paths.append(path)
    return paths


def cmd_fuse(args) -> list[Path]:
    panels, config = load_study(args.manifest)
    fits = _fits_for(args, panels, config)
    cv = cross_validate(fits, panels, config.p, FuseConfig.from_study(config))
    return _write_decomposition(cv.decomposition, panels, _out(args), args.format, "decomposition")


def cmd_test(args) -> list[Path]:
    panels, config = load_study(args.manifest)
    fits = _fits_for(args, panels, config)
    if args.decomposition:
        decomp = PathDecomposition.from_dict(json.loads(Path(args.decomposition).read_text()))
    else:
        decomp = cross_validate(fits, panels, config.p, FuseConfig.from_study(config)).decomposition
    reports = run_tests(decomp, fits, config.alpha, screen=not args.no_screen)
    if args.bh:
        # optional extension: Benjamini-Hochberg across the coordinates of each test
        for rep in reports.values():
            rep.reject = benjamini_hochberg(rep.p_value, rep.alpha)
            rep.extra["bh"] = True
    out = _out(args)
    if args.format == "json":
        return [_write_json({k: r.to_dict() for k, r in reports.items()}, out / "tests.json")]
    rows = []
    for rep in reports.values():
        for row in rep.rows():
            row["reject"] = int(row["reject"])
            rows.append(row)
    return [_write_dict_csv(rows, out / "tests.csv")]


def cmd_bench(args) -> list[Path]:
    panels, config = load_study(args.manifest)
    res = legacy_fit(panels, config.p, config.center, lam=args.lam, adaptive=args.adaptive)
    if not res.fista.converged:
        print(f"warning: FISTA stopped after {res.fista.iterations} iterations without converging",
              file=sys.stderr)
    stem = "bench_adaptive" if args.adaptive else "bench"
    return _write_decomposition(res.decomposition, panels, _out(args), args.format, stem)


def cmd_grid(args) -> list[Path]:
    spec = GridSpec(d=args.d, K=args.K, mean_T=args.mean_T, heterogeneity=args.heterogeneity,
                    methods=args.methods, replicates=args.replicates)
    rows = run_grid(spec, seed=args.seed, threads=args.threads, timing=not args.no_timing)
    out = _out(args)
    csv_path, json_path = out / "grid.csv", out / "grid_summary.json"
    write_rows_csv(rows, csv_path)
    write_summary_json(rows, json_path)
    failed = sum(bool(r.error) for r in rows)
    if failed:
        print(f"warning: {failed} of {len(rows)} replicates failed (see error column)", file=sys.stderr)
    return [csv_path, json_path]


def cmd_score(args) -> list[Path]:
    decomp = PathDecomposition.from_dict(json.loads(Path(args.decomposition).read_text()))
    truth = SimTruth.from_dict(json.loads(Path(args.truth).read_text()))
    if decomp.common_sparse is None:
        raise ValidationError("decomposition has no sparse paths to score")
    if decomp.common_sparse.shape != truth.alpha0.shape or decomp.K != truth.alpha.shape[0]:
        raise ValidationError("decomposition and truth disagree on (d, p, K)")
    scores = score_estimation(decomp, truth)
    if args.tests:
        obj = json.loads(Path(args.tests).read_text())
        for kind, rep in obj.items():
            report = TestReport(kind, np.asarray(rep["statistic"]), rep["df"], np.asarray(rep["p_value"]),
                                np.asarray(rep["reject"], dtype=bool), rep["alpha"])
            fdr, power = score_tests(report, truth.sets)
            scores[f"fdr_{kind}"] = fdr
            scores[f"power_{kind}"] = power
    out = _out(args)
    clean = {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in scores.items()}
    if args.format == "json":
        return [_write_json(clean, out / "scores.json")]
    return [_write_dict_csv([{k: "" if v is None else v for k, v in clean.items()}], out / "scores.csv")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvfuse", description="Multi-subject sparse VAR: common and unique paths.")
    parser.add_argument("--seed", type=int, default=0, help="master random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for the grid")
    parser.add_argument("--out-dir", default=".", help="directory for outputs")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic study (manifest, CSVs, truth.json)")
    p.add_argument("--preset", choices=("high", "medium", "low"), default="medium")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--mean-T", dest="mean_T", type=int, default=200)
    p.add_argument("--p", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="per-subject Lasso (and debiasing with --emit-debiased)")
    p.add_argument("manifest")
    p.add_argument("--emit-debiased", action="store_true", help="write full debiased fits to fits.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fuse", help="common/unique decomposition with cross-validated thresholds")
    p.add_argument("manifest")
    p.add_argument("--fits", help="fits.json from 'fit --emit-debiased' (refit when omitted)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("test", help="nullity, homogeneity and significance tests")
    p.add_argument("manifest")
    p.add_argument("--fits")
    p.add_argument("--decomposition", help="decomposition.json from 'fuse'")
    p.add_argument("--bh", action="store_true", help="Benjamini-Hochberg adjustment (extension)")
    p.add_argument("--no-screen", action="store_true",
                   help="do not require a nonzero thresholded common path for significance rejections")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bench", help="stacked Lasso baseline solved by FISTA")
    p.add_argument("manifest")
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--lam", type=float, help="fixed penalty (holdout-selected when omitted)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grid", help="simulation grid: one metric row per cell, method and replicate")
    p.add_argument("--d", type=_int_list, default=(10, 20))
    p.add_argument("--K", type=_int_list, default=(10, 15))
    p.add_argument("--mean-T", dest="mean_T", type=_int_list, default=(50, 200))
    p.add_argument("--heterogeneity", type=_str_list, default=("high", "medium", "low"))
    p.add_argument("--methods", type=_str_list, default=("proposed", "legacy", "legacy-adaptive"))
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--no-timing", action="store_true", help="leave cpu_seconds empty (byte-stable output)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("score", help="estimation metrics (and test FDR/power) against a truth file")
    p.add_argument("--decomposition", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tests", help="tests.json from 'test --format json'")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        paths = args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
