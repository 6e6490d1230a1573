"""Reading observations and writing/reading result tables.

All floats are written with 12 significant digits, so reading a table back
reproduces the written values to that precision.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import DERIVED_NAMES, PARAM_NAMES, STATE_MAX, ObservationSet, derived_quantities

FLOAT_FORMAT = "%.12g"
OBS_HEADER = ("subject_id", "day", "series", "value")
BAND_LEVELS = (2.5, 25.0, 50.0, 75.0, 97.5)
SUMMARY_LEVELS = (5.0, 50.0, 95.0)


def fmt(x):
    return FLOAT_FORMAT % x


def load_observations(path, subject=None):
    """Parse a ``subject_id,day,series,value`` CSV file.

    Parameters
    ----------
    path : str or Path
    subject : str, optional
        Subject to select; required when the file holds more than one.

    Raises
    ------
    ValidationError
        On a malformed row (with its line number), a value outside
        ``[0, 100]``, a duplicate ``(day, series)`` pair or an ambiguous subject.
    """
    rows = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise ValidationError(f"cannot read {path}: {err}") from err
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != OBS_HEADER:
            raise ValidationError(f"{path}: header must be {','.join(OBS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            sid, day, tag, value = (c.strip() for c in row)
            try:
                day_f = float(day)
                value_f = float(value)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: day and value must be numbers") from None
            if not day_f.is_integer() or day_f < 0:
                raise ValidationError(f"{path}:{lineno}: day must be a nonnegative integer")
            if tag not in ("V", "M"):
                raise ValidationError(f"{path}:{lineno}: series must be V or M, got {tag!r}")
            if not (math.isfinite(value_f) and 0.0 <= value_f <= STATE_MAX):
                raise ValidationError(f"{path}:{lineno}: value {value} outside [0, 100]")
            records = rows.setdefault(sid, {})
            key = (int(day_f), tag)
            if key in records:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate observation for day {key[0]}, series {tag}")
            records[key] = value_f
    if subject is None:
        if len(rows) > 1:
            raise ValidationError(
                f"{path} holds subjects {sorted(rows)}; choose one with --subject")
        if not rows:
            return ObservationSet.from_records([])
        subject = next(iter(rows))
    subject = str(subject)
    if subject not in rows:
        raise ValidationError(f"subject {subject!r} not found in {path}")
    records = [(d, s, v) for (d, s), v in rows[subject].items()]
    return ObservationSet.from_records(records, subject_id=subject)


def list_subjects(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return sorted({row["subject_id"].strip() for row in reader})


def write_observations(path, datasets):
    """Write one or more :class:`ObservationSet` objects to a single CSV file."""
    if isinstance(datasets, ObservationSet):
        datasets = [datasets]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_HEADER)
        for obs in datasets:
            for day, tag, value in obs.records():
                w.writerow([obs.subject_id, day, tag, fmt(value)])


def write_table(path, header, rows, float_format=FLOAT_FORMAT):
    """Write a numeric table; floats use 12 significant digits by default."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([float_format % v if isinstance(v, (float, np.floating)) else v
                        for v in row])


def read_table(path):
    """Read a numeric CSV written by :func:`write_table`.

    Returns
    -------
    header : list of str
    data : ndarray, shape (rows, columns)
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(c) for c in row] for row in reader if row]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def write_chain(path, values):
    """Chain draws at full double precision, so that a second-stage run from
    the file reproduces a single combined run exactly."""
    write_table(path, PARAM_NAMES, values.astype(float), "%.17g")


def posterior_columns(values, weights=None):
    """Parameters, derived quantities and weight as one array."""
    values = np.atleast_2d(values)
    if weights is None:
        weights = np.full(values.shape[0], 1.0 / values.shape[0])
    return np.column_stack([values, derived_quantities(values), weights])


POSTERIOR_HEADER = PARAM_NAMES + DERIVED_NAMES + ("weight",)


def write_posterior(path, values, weights=None):
    """One row per draw: parameters, derived quantities and normalized weight."""
    write_table(path, POSTERIOR_HEADER, posterior_columns(values, weights))


def read_posterior(path):
    """Return ``(values, weights)`` from a posterior CSV."""
    header, data = read_table(path)
    missing = [c for c in PARAM_NAMES + ("weight",) if c not in header]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    cols = [header.index(c) for c in PARAM_NAMES]
    return data[:, cols], data[:, header.index("weight")]


def weighted_quantile(x, weights, q):
    """Quantiles (``q`` in percent) of a weighted sample, by interpolation
    between the mid-points of the cumulative weights."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cum = np.cumsum(w) - 0.5 * w
    cum /= w.sum()
    return np.interp(np.asarray(q, dtype=float) / 100.0, cum, x)


def summary_rows(values, weights=None):
    """Weighted mean, SD and 5/50/95 percentiles for every column."""
    cols = posterior_columns(values, weights)
    w = cols[:, -1] / cols[:, -1].sum()
    rows = []
    for j, name in enumerate(PARAM_NAMES + DERIVED_NAMES):
        x = cols[:, j]
        ok = np.isfinite(x)
        if not ok.any():
            rows.append([name] + [math.nan] * 5)
            continue
        wj = w[ok] / w[ok].sum()
        mean = float(wj @ x[ok])
        sd = math.sqrt(max(float(wj @ (x[ok] - mean) ** 2), 0.0))
        q = weighted_quantile(x[ok], wj, SUMMARY_LEVELS)
        rows.append([name, mean, sd, *map(float, q)])
    return rows


SUMMARY_HEADER = ("parameter", "mean", "sd", "q05", "q50", "q95")


def write_summary(path, values, weights=None):
    write_table(path, SUMMARY_HEADER, summary_rows(values, weights))


def read_summary(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return {row[0]: tuple(float(c) for c in row[1:]) for row in reader if row}


BAND_HEADER = ("day",) + tuple(f"{s}_q{lvl:g}" for s in ("V", "M") for lvl in BAND_LEVELS)


def write_bands(path, bands):
    rows = [[int(d)] + list(map(float, bands.v[i])) + list(map(float, bands.m[i]))
            for i, d in enumerate(bands.days)]
    write_table(path, BAND_HEADER, rows)


def write_trajectories(path, days, v, m):
    """Long-format sampled paths: ``path,day,V,M``."""
    rows = []
    for p in range(v.shape[0]):
        for i, d in enumerate(days):
            rows.append([p, int(d), float(v[p, i]), float(m[p, i])])
    write_table(path, ("path", "day", "V", "M"), rows)


def write_learnability(path, report):
    rows = [[e.name, float(e.H), float(e.log_sd_ratio), e.n_posterior, e.bins,
             "; ".join(e.flags)] for e in report.entries]
    write_table(path, ("parameter", "H", "log_sd_ratio", "n", "bins", "flags"), rows)


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
                          + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
