"""CSV and manifest I/O for study outputs.

All numeric formatting goes through one fixed format so that a re-run
under the same manifest produces byte-identical tables.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .. import __version__ as _code_version
from ..exceptions import ConfigurationError, NumericDomainError
from .coverage import METHODS, CoverageTable

PANEL_COLUMNS = ("site_id", "x_km", "y_km", "time_index", "value")


def _fmt(x) -> str:
    return format(float(x), ".12g")


def write_coverage_csv(table: CoverageTable, path):
    """Columns: level, parameter, method, count, n_effective, rate, theta_star."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["study", "level", "parameter", "method", "count", "n_effective", "rate", "theta_star"]
        )
        for li, level in enumerate(table.levels):
            for pi, name in enumerate(table.param_names):
                for mi, method in enumerate(METHODS):
                    count = int(table.counts[li, pi, mi])
                    w.writerow(
                        [
                            table.study,
                            _fmt(level),
                            name,
                            method,
                            count,
                            table.n_effective,
                            _fmt(count / table.n_effective) if table.n_effective else "nan",
                            _fmt(table.theta_star[pi]),
                        ]
                    )


def read_coverage_csv(path) -> CoverageTable:
    rows = list(csv.DictReader(open(path, newline="")))
    if not rows:
        raise ConfigurationError(f"empty coverage table at {path}")
    study = rows[0]["study"]
    levels = sorted({float(r["level"]) for r in rows})
    names = []
    for r in rows:
        if r["parameter"] not in names:
            names.append(r["parameter"])
    n_eff = int(rows[0]["n_effective"])
    counts = np.zeros((len(levels), len(names), 2), dtype=int)
    theta = np.zeros(len(names))
    for r in rows:
        li = levels.index(float(r["level"]))
        pi = names.index(r["parameter"])
        mi = METHODS.index(r["method"])
        counts[li, pi, mi] = int(r["count"])
        theta[pi] = float(r["theta_star"])
    return CoverageTable(
        study=study,
        param_names=tuple(names),
        levels=tuple(levels),
        counts=counts,
        n_effective=n_eff,
        n_failed=0,
        theta_star=theta,
    )


def write_replication_records(records, path):
    """Per-replication raw records (flags, checksums, memberships)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not records:
        Path(path).write_text("rep\n")
        return
    keys = list(records[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for rec in records:
            w.writerow([rec[k] for k in keys])


def write_manifest(path, config, extra=None, wall_time=None):
    """Structured-text run manifest: config, seed, code version, wall time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "study": config.study,
        "replications": config.replications,
        "seed": config.seed,
        "sampler": config.sampler,
        "n_draws": config.n_draws,
        "paper_scale": config.paper_scale,
        "workers": config.workers,
        "params": config.params,
        "code_version": _code_version,
        "wall_time_s": wall_time,
    }
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def write_panel_csv(path, coords, panel):
    """Panel as CSV with columns site_id, x_km, y_km, time_index, value.

    Rows are ordered by (time_index, site_id); this column and row order is
    the interchange format for fitting and simulation output.
    """
    coords = np.asarray(coords, dtype=float)
    panel = np.atleast_2d(np.asarray(panel, dtype=float))
    n_times, n_sites = panel.shape
    if coords.shape != (n_sites, 2):
        raise NumericDomainError("coords must be (n_sites, 2) matching the panel")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PANEL_COLUMNS)
        for j in range(n_times):
            for s in range(n_sites):
                w.writerow([s, _fmt(coords[s, 0]), _fmt(coords[s, 1]), j, _fmt(panel[j, s])])


def read_panel_csv(path):
    """Inverse of write_panel_csv; returns (coords, panel)."""
    rows = list(csv.DictReader(open(path, newline="")))
    if not rows:
        raise ConfigurationError(f"empty panel at {path}")
    site_ids = sorted({int(r["site_id"]) for r in rows})
    time_ids = sorted({int(r["time_index"]) for r in rows})
    if site_ids != list(range(len(site_ids))):
        raise ConfigurationError("site ids must be 0..n-1")
    coords = np.zeros((len(site_ids), 2))
    panel = np.full((len(time_ids), len(site_ids)), np.nan)
    t_index = {t: k for k, t in enumerate(time_ids)}
    for r in rows:
        s = int(r["site_id"])
        coords[s] = (float(r["x_km"]), float(r["y_km"]))
        panel[t_index[int(r["time_index"])], s] = float(r["value"])
    if np.any(np.isnan(panel)):
        raise ConfigurationError("panel has missing (site, time) cells")
    return coords, panel


def write_ranking_csv(ranking, path):
    """Log-score ranking rows: holdout site, model, score, rank."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "model", "log_score", "rank"])
        for row in ranking:
            w.writerow([row["site"], row["model"], _fmt(row["log_score"]), row["rank"]])
