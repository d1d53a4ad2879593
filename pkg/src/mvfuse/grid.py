"""Simulation grid driver: one metric row per (cell, method, replicate)."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .legacy import legacy_fit
from .metrics import score_estimation, score_tests
from .panel import StudyConfig, ValidationError
from .pipeline import estimate
from .synth import PRESETS, draw_design, generate

METHODS = ("proposed", "legacy", "legacy-adaptive")
HETEROGENEITY = ("high", "medium", "low")
METRIC_NAMES = ("rmse0", "rmseK", "sens0", "sensK", "spec0", "specK", "fdr_null", "power_null",
                "fdr_homo", "power_homo", "fdr_sig", "power_sig", "cpu_seconds")


@dataclass
class MetricRow:
    method: str
    d: int
    K: int
    mean_T: int
    heterogeneity: str
    replicate: int
    rmse0: float = math.nan
    rmseK: float = math.nan
    sens0: float = math.nan
    sensK: float = math.nan
    spec0: float = math.nan
    specK: float = math.nan
    fdr_null: float = math.nan
    power_null: float = math.nan
    fdr_homo: float = math.nan
    power_homo: float = math.nan
    fdr_sig: float = math.nan
    power_sig: float = math.nan
    cpu_seconds: float = math.nan
    error: str = ""


COLUMNS = tuple(f.name for f in fields(MetricRow))


@dataclass(frozen=True)
class GridSpec:
    d: tuple[int, ...] = (10, 20)
    K: tuple[int, ...] = (10, 15)
    mean_T: tuple[int, ...] = (50, 200)
    heterogeneity: tuple[str, ...] = HETEROGENEITY
    methods: tuple[str, ...] = METHODS
    replicates: int = 10

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown method {m!r}; choose from {list(METHODS)}")
        for h in self.heterogeneity:
            if h not in PRESETS:
                raise ValidationError(f"unknown heterogeneity {h!r}; choose from {list(HETEROGENEITY)}")
        if self.replicates < 1:
            raise ValidationError("replicates must be positive")

    def tasks(self):
        for d, K, T, h, r in itertools.product(self.d, self.K, self.mean_T, self.heterogeneity,
                                                range(self.replicates)):
            for m in self.methods:
                yield (m, d, K, T, h, r)


def replicate_seed(seed: int, d: int, K: int, heterogeneity: str, replicate: int) -> int:
    """Seed shared by both sample sizes of a cell, so replicates pair across mean_T."""
    h = HETEROGENEITY.index(heterogeneity)
    return int(np.random.SeedSequence([seed, d, K, h, replicate]).generate_state(1)[0])


def run_replicate(method: str, d: int, K: int, mean_T: int, heterogeneity: str, replicate: int,
                  seed: int = 0, config: StudyConfig | None = None, timing: bool = True) -> MetricRow:
    row = MetricRow(method, d, K, mean_T, heterogeneity, replicate)
    try:
        design = draw_design(heterogeneity, d, K, mean_T, replicate_seed(seed, d, K, heterogeneity, replicate))
        panels, truth = generate(design)
        cfg = config or StudyConfig(K=K)
        if cfg.K != K:
            cfg = replace(cfg, K=K)
        start = time.process_time()
        if method == "proposed":
            fit = estimate(panels, cfg)
            decomp, reports = fit.decomposition, fit.reports
        else:
            decomp = legacy_fit(panels, cfg.p, cfg.center, adaptive=method == "legacy-adaptive").decomposition
            reports = {}
        if timing:
            row.cpu_seconds = time.process_time() - start
        for key, value in score_estimation(decomp, truth).items():
            setattr(row, key, value)
        for kind, short in (("nullity", "null"), ("homogeneity", "homo"), ("significance", "sig")):
            if kind in reports:
                fdr, power = score_tests(reports[kind], truth.sets)
                setattr(row, f"fdr_{short}", fdr)
                setattr(row, f"power_{short}", power)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def _run(args):
    return run_replicate(*args)


def run_grid(spec: GridSpec, seed: int = 0, threads: int = 1, config: StudyConfig | None = None,
             timing: bool = True) -> list[MetricRow]:
    """Run every task in ``spec``; rows come back in task order regardless of completion order.

    ``timing=False`` leaves ``cpu_seconds`` empty so that repeated runs give identical output.
    """
    jobs = [(*task, seed, config, timing) for task in spec.tasks()]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run, jobs, chunksize=1))
    return [_run(job) for job in jobs]


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_rows_csv(rows: list[MetricRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([_fmt(getattr(row, c)) for c in COLUMNS])


def read_rows_csv(path: str | Path) -> list[MetricRow]:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for f in fields(MetricRow):
                raw = rec[f.name]
                if f.name in ("d", "K", "mean_T", "replicate"):
                    kw[f.name] = int(raw)
                elif f.name in METRIC_NAMES:
                    kw[f.name] = float(raw) if raw else math.nan
                else:
                    kw[f.name] = raw
            rows.append(MetricRow(**kw))
    return rows


def cell_medians(rows: list[MetricRow]) -> list[dict]:
    """Per-cell medians of every metric, ignoring missing values and failed replicates."""
    groups: dict = {}
    for row in rows:
        key = (row.method, row.d, row.K, row.mean_T, row.heterogeneity)
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        entry = dict(zip(("method", "d", "K", "mean_T", "heterogeneity"), key))
        ok = [r for r in members if not r.error]
        entry["replicates"] = len(members)
        entry["failed"] = len(members) - len(ok)
        for name in METRIC_NAMES:
            vals = np.array([getattr(r, name) for r in ok], dtype=float)
            vals = vals[~np.isnan(vals)]
            entry[name] = float(np.median(vals)) if vals.size else None
        out.append(entry)
    return out


def write_summary_json(rows: list[MetricRow], path: str | Path) -> None:
    Path(path).write_text(json.dumps(cell_medians(rows), indent=2))
