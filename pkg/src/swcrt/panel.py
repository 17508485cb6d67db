"""Read and write trial data as CSV panels.

Two layouts are accepted, each with a ``cluster`` and ``period`` column
plus either a ``sequence`` column (first untreated-to-treated switch after
period ``sequence``) or a 0/1 ``treatment`` column:

* individual rows with an ``outcome`` column;
* one row per cluster-period cell with ``mean`` and ``n`` columns, and
  optionally ``sd`` (within-cell standard deviation, divisor ``n - 1``).
  With ``sd`` the within-cell variation is recovered exactly, so
  feasible-GLS fits match those from the individual rows; without it the
  correlation is estimated from the cell means alone.

Only complete, balanced panels are accepted: every cluster observed in
every period with the same number of individuals per cell.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import IoError, SchemaError, UnbalancedPanel, ValidationError
from .gls import WithinCellStats


@dataclass(frozen=True, eq=False)
class PanelData:
    """Cluster-period means of a complete stepped-wedge trial.

    Attributes:
        means: ``(I, J)`` cell means, clusters in ``clusters`` order.
        sequences: sequence of each cluster (1-based).
        cell_size: individuals per cell.
        clusters: cluster labels as read.
        periods: period labels as read, ascending.
        within: within-cell statistics, when individual rows or cell
            standard deviations were given.
        individual: whether the input had one row per individual.
    """

    means: np.ndarray
    sequences: np.ndarray
    cell_size: int
    clusters: tuple[str, ...]
    periods: tuple[str, ...]
    within: WithinCellStats | None = None
    individual: bool = True


def _sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def _number(value: str, column: str, line: int) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"column {column!r} on line {line} is not numeric: {value!r}") from None
    if not math.isfinite(out):
        raise SchemaError(f"column {column!r} on line {line} is not finite")
    return out


def parse_panel(text: str) -> PanelData:
    """Parse CSV text in either supported layout.

    Raises:
        SchemaError: a required column is missing or a value is malformed.
        UnbalancedPanel: a cell is missing or cell sizes differ.
    """
    reader = csv.DictReader(io.StringIO(text))
    cols = set(reader.fieldnames or ())
    for need in ("cluster", "period"):
        if need not in cols:
            raise SchemaError(f"data is missing the {need!r} column")
    if "outcome" in cols:
        individual = True
    elif {"mean", "n"} <= cols:
        individual = False
    else:
        raise SchemaError("data needs an 'outcome' column, or 'mean' and 'n' columns")
    if "sequence" in cols:
        assign = "sequence"
    elif "treatment" in cols:
        assign = "treatment"
    else:
        raise SchemaError("data needs a 'sequence' or 'treatment' column")

    has_sd = not individual and "sd" in cols
    ss = 0.0
    cells: dict[tuple[str, str], list[float]] = defaultdict(list)
    sizes: dict[tuple[str, str], int] = {}
    assignment: dict[tuple[str, str], set[float]] = defaultdict(set)
    for line, row in enumerate(reader, start=2):
        key = (row["cluster"].strip(), row["period"].strip())
        if individual:
            cells[key].append(_number(row["outcome"], "outcome", line))
        else:
            if key in sizes:
                raise UnbalancedPanel(f"cell {key} appears twice in aggregated data")
            cells[key].append(_number(row["mean"], "mean", line))
            n = _number(row["n"], "n", line)
            if n < 1 or n != int(n):
                raise SchemaError(f"column 'n' on line {line} must be a positive integer")
            sizes[key] = int(n)
            if has_sd:
                sd = _number(row["sd"], "sd", line)
                if sd < 0:
                    raise SchemaError(f"column 'sd' on line {line} must be nonnegative")
                ss += (n - 1) * sd * sd
        assignment[key].add(_number(row[assign], assign, line))

    if not cells:
        raise SchemaError("data has no rows")
    clusters = tuple(sorted({c for c, _ in cells}, key=_sort_key))
    periods = tuple(sorted({p for _, p in cells}, key=_sort_key))
    I, J = len(clusters), len(periods)  # noqa: E741
    for c in clusters:
        for p in periods:
            if (c, p) not in cells:
                raise UnbalancedPanel(f"cluster {c!r} has no observations in period {p!r}")
    if individual:
        counts = {len(v) for v in cells.values()}
    else:
        counts = set(sizes.values())
    if len(counts) != 1:
        raise UnbalancedPanel(f"cell sizes differ across cluster-periods: {sorted(counts)}")
    K = counts.pop()

    means = np.empty((I, J))
    for a, c in enumerate(clusters):
        for b, p in enumerate(periods):
            vals = np.asarray(cells[(c, p)])
            means[a, b] = vals.mean()
            if individual:
                ss += float(np.sum((vals - means[a, b]) ** 2))

    sequences = np.empty(I, dtype=np.int64)
    for a, c in enumerate(clusters):
        marks = [assignment[(c, p)] for p in periods]
        if any(len(m) != 1 for m in marks):
            raise SchemaError(f"cluster {c!r} has conflicting {assign} values within a period")
        values = [m.pop() for m in marks]
        if assign == "sequence":
            if len(set(values)) != 1:
                raise SchemaError(f"cluster {c!r} changes sequence across periods")
            q = values[0]
        else:
            if any(v not in (0.0, 1.0) for v in values):
                raise SchemaError("treatment must be coded 0/1")
            if any(a0 > a1 for a0, a1 in zip(values, values[1:])):
                raise ValidationError(f"cluster {c!r} switches back from treatment to control")
            q = float(values.index(1.0)) if 1.0 in values else float(J)
        if q != int(q) or not 1 <= q <= J - 1:
            raise ValidationError(f"cluster {c!r} has sequence {q}; expected 1..{J - 1}")
        sequences[a] = int(q)

    within = WithinCellStats(ss, I * J * (K - 1), K) if individual or has_sd else None
    return PanelData(means, sequences, K, clusters, periods, within, individual)


def read_panel(path: str) -> PanelData:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read data file {path}: {exc.strerror}") from None
    return parse_panel(text)


def _g(x: float) -> str:
    return repr(float(x))


def trial_to_csv(outcomes: np.ndarray, sequences, individual: bool = True) -> str:
    """Export an ``(I, J, K)`` outcome array in one of the supported layouts.

    Values are written with full round-trip precision.
    """
    outcomes = np.asarray(outcomes, dtype=float)
    I, J, K = outcomes.shape  # noqa: E741
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if individual:
        w.writerow(["cluster", "period", "sequence", "outcome"])
        for i in range(I):
            for j in range(J):
                for k in range(K):
                    w.writerow([i + 1, j + 1, int(sequences[i]), _g(outcomes[i, j, k])])
    else:
        w.writerow(["cluster", "period", "sequence", "mean", "n", "sd"])
        means = outcomes.mean(axis=2)
        sds = outcomes.std(axis=2, ddof=1) if K > 1 else np.zeros((I, J))
        for i in range(I):
            for j in range(J):
                w.writerow([i + 1, j + 1, int(sequences[i]), _g(means[i, j]), K, _g(sds[i, j])])
    return buf.getvalue()
