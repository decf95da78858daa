"""CSV ingestion and export of survival datasets.

File layout::

    #kinds: continuous,categorical,...      (optional; one per variable column)
    time,event,age,male,...
    12.5,1,64,0,...

Without a ``#kinds:`` line every variable is continuous unless listed in
``categorical``.  Rows with an empty cell are dropped with a warning.
"""
from __future__ import annotations

import csv
import logging
from typing import Sequence

import numpy as np

from .survival import CATEGORICAL, CONTINUOUS, SurvivalDataset

log = logging.getLogger(__name__)

KINDS_PREFIX = "#kinds:"


class CSVFormatError(ValueError):
    pass


def ingest_csv(path, site_id: int = 0, categorical: Sequence[str] = ()) -> SurvivalDataset:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    kinds = None
    start = 0
    if lines and lines[0].startswith(KINDS_PREFIX):
        kinds = [k.strip() for k in lines[0][len(KINDS_PREFIX):].split(",")]
        start = 1
    rows = list(csv.reader(lines[start:]))
    if not rows:
        raise CSVFormatError(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["time", "event"]:
        raise CSVFormatError(f"{path}: header must start with time,event")
    names = header[2:]
    if len(set(names)) != len(names):
        raise CSVFormatError(f"{path}: duplicate column names")
    if kinds is None:
        kinds = [CATEGORICAL if v in set(categorical) else CONTINUOUS for v in names]
    if len(kinds) != len(names) or any(k not in (CONTINUOUS, CATEGORICAL) for k in kinds):
        raise CSVFormatError(f"{path}: #kinds line must list one of "
                             f"{CONTINUOUS}/{CATEGORICAL} per variable column")
    times, events, X, dropped = [], [], [], []
    first_data_line = start + 2  # 1-based file line of the first data row
    for k, row in enumerate(rows[1:]):
        line = first_data_line + k
        if not row:
            continue
        if len(row) != len(header):
            raise CSVFormatError(f"{path}: row {line} has {len(row)} cells, expected {len(header)}")
        if any(c.strip() == "" or c.strip().upper() == "NA" for c in row):
            dropped.append(line)
            continue
        try:
            t = float(row[0])
        except ValueError:
            raise CSVFormatError(f"{path}: row {line}: time {row[0]!r} is not numeric") from None
        if not np.isfinite(t) or t < 0:
            raise CSVFormatError(f"{path}: row {line}: time must be finite and nonnegative")
        if row[1].strip() not in ("0", "1", "0.0", "1.0"):
            raise CSVFormatError(f"{path}: row {line}: event {row[1]!r} is not 0 or 1")
        try:
            x = [float(c) for c in row[2:]]
        except ValueError:
            raise CSVFormatError(f"{path}: row {line}: nonnumeric covariate") from None
        times.append(t)
        events.append(int(float(row[1])))
        X.append(x)
    if dropped:
        shown = ", ".join(str(r) for r in dropped[:10]) + (" ..." if len(dropped) > 10 else "")
        log.warning("%s: dropped %d row(s) with missing values (rows %s)", path, len(dropped), shown)
    X = np.asarray(X, dtype=float).reshape(len(times), len(names))
    return SurvivalDataset(np.asarray(times), np.asarray(events, dtype=int), X, names, kinds,
                           site_id=site_id)


def write_dataset_csv(data: SurvivalDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(KINDS_PREFIX + ",".join(data.variable_kinds) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event", *data.variable_names])
        for t, e, x in zip(data.time, data.event, data.X):
            w.writerow([repr(float(t)), int(e), *(_num(v) for v in x)])


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2 ** 53 else repr(float(v))
