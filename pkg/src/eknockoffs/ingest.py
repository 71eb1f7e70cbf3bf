"""Loading and cleaning real feature/response tables, and the rerun pipeline on them."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyAfterCleaning, FileUnreadable, ResponseMissing
from .filter import derandomized_knockoffs, knockoff_filter, map_runs, run_streams
from .knockoffs import sample_knockoff_mx, second_order_model
from .numerics import RngStream
from .stats import LcdStatistic

MISSING = ("", "NA")

DERAND_STREAM = 0
ORIGINAL_STREAM = 1


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list
    source: str = ""
    log: list = field(default_factory=list)

    @property
    def shape(self):
        return self.X.shape


def _read_table(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from None
    if not rows:
        raise FileUnreadable(f"{path} has no header row")
    return rows[0], rows[1:]


def _parse(cell):
    cell = cell.strip()
    if cell in MISSING:
        return math.nan
    return float(cell)


def clean(header, body, response_column, min_occurrence=3, log=None, group_column=None):
    """Apply the cleaning rules to a parsed table; returns ``(X, y, names, log, groups)``.

    Rows with a missing or non-numeric cell are dropped, then binary columns
    with fewer than ``min_occurrence`` ones, then constant columns, and
    finally every remaining column is standardized.  ``group_column``, if
    given, holds free-text labels that are returned per kept row (``groups``
    is None otherwise).
    """
    log = [] if log is None else log
    if response_column not in header:
        raise ResponseMissing(f"response column {response_column!r} not in header")
    if group_column is not None and group_column not in header:
        raise ResponseMissing(f"group column {group_column!r} not in header")
    width = len(header)
    gcol = header.index(group_column) if group_column is not None else -1
    data, labels = [], []
    for i, row in enumerate(body, start=2):
        if not row:
            continue
        if len(row) != width:
            log.append(f"drop row {i}: expected {width} cells, found {len(row)}")
            continue
        label = row[gcol].strip() if gcol >= 0 else None
        try:
            vals = [0.0 if j == gcol else _parse(c) for j, c in enumerate(row)]
        except ValueError:
            log.append(f"drop row {i}: non-numeric cell")
            continue
        if any(math.isnan(v) for v in vals) or label in MISSING:
            log.append(f"drop row {i}: missing value")
            continue
        data.append(vals)
        labels.append(label)
    if not data:
        if body and all(entry.endswith("non-numeric cell") for entry in log):
            raise EmptyAfterCleaning("no complete rows remain: every row has a non-numeric cell")
        raise EmptyAfterCleaning("no complete rows remain")
    table = np.array(data, dtype=float)
    ycol = header.index(response_column)
    y = table[:, ycol]
    keep = [j for j in range(width) if j not in (ycol, gcol)]
    X = table[:, keep]
    names = [header[j] for j in keep]

    cols = []
    for j, name in enumerate(names):
        col = X[:, j]
        if np.all((col == 0) | (col == 1)) and col.sum() < min_occurrence:
            log.append(f"drop column {name}: {int(col.sum())} occurrences < {min_occurrence}")
            continue
        if np.all(col == col[0]):
            log.append(f"drop column {name}: zero variance")
            continue
        cols.append(j)
    if not cols:
        raise EmptyAfterCleaning("no feature columns remain")
    X = X[:, cols]
    names = [names[j] for j in cols]
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    log.append(f"standardize {len(names)} columns (after cleaning)")
    return X, y, names, log, (labels if gcol >= 0 else None)


def load_csv(path, response_column, min_occurrence=3):
    """Read a comma-separated file with a header row into a cleaned, standardized ``Dataset``."""
    header, body = _read_table(path)
    header = [h.strip() for h in header]
    X, y, names, log, _ = clean(header, body, response_column, min_occurrence)
    return Dataset(X, y, names, str(path), log)


@dataclass(frozen=True)
class _OriginalRun:
    X: np.ndarray
    y: np.ndarray
    model: object
    statistic: object
    alpha: float
    seed: RngStream

    def __call__(self, r):
        ko, st, _ = run_streams(self.seed.spawn(r), 1)
        w = self.statistic(self.X, sample_knockoff_mx(self.model, self.X, ko), self.y, st).w
        return knockoff_filter(w, self.alpha).selected


def real_data_pipeline(ds, alpha_kn=0.05, alpha_ebh=0.1, M=50, reruns=10, master_seed=0,
                       statistic=None, workers=1):
    """Rerun original and derandomized knockoffs on a dataset under a second-order model.

    Returns a dict with per-feature selection frequencies, per-rerun
    discovery counts and the selected index lists.
    """
    model = second_order_model(ds.X)
    if statistic is None:
        family = "logistic" if np.all((ds.y == 0) | (ds.y == 1)) else "gaussian"
        statistic = LcdStatistic(family)
    p = ds.X.shape[1]
    orig = map_runs(_OriginalRun(ds.X, ds.y, model, statistic, alpha_ebh,
                                 RngStream(master_seed, ORIGINAL_STREAM)), range(reruns), workers)
    derand = []
    for r in range(reruns):
        sel, _ = derandomized_knockoffs(ds.X, ds.y, model, statistic, alpha_kn, alpha_ebh, M,
                                        RngStream(master_seed, DERAND_STREAM, (r,)), workers=workers)
        derand.append(sel.selected)
    freq = {}
    for label, sels in (("original", orig), ("derandomized", derand)):
        counts = np.zeros(p)
        for s in sels:
            counts[s] += 1
        freq[label] = counts / reruns
    return {
        "feature_names": list(ds.feature_names),
        "freq_original": freq["original"],
        "freq_derandomized": freq["derandomized"],
        "discoveries_original": [int(len(s)) for s in orig],
        "discoveries_derandomized": [int(len(s)) for s in derand],
        "selected_original": [[int(j) for j in s] for s in orig],
        "selected_derandomized": [[int(j) for j in s] for s in derand],
    }


def write_pipeline_outputs(summary, params, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "frequencies.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_name", "freq_original", "freq_derandomized"])
        for name, fo, fd in zip(summary["feature_names"], summary["freq_original"],
                                summary["freq_derandomized"]):
            writer.writerow([name, repr(float(fo)), repr(float(fd))])
    doc = {k: v for k, v in summary.items() if not k.startswith("freq_")}
    doc["parameters"] = params
    with open(os.path.join(out_dir, "runs.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
