"""CSV ingestion with a declared schema and reference-coded categoricals."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError, InvalidArgument
from .orchestrator import ModelData


@dataclass
class DataTable:
    """Typed columns: float arrays for numeric columns, string arrays for categorical ones."""

    columns: dict
    n: int
    categorical: set = field(default_factory=set)

    def __getitem__(self, name):
        return self.columns[name]

    @property
    def names(self):
        return list(self.columns)


def _level_key(level):
    try:
        return (0, float(level), level)
    except ValueError:
        return (1, 0.0, level)


def ingest(path, numeric=None, categorical=()):
    """Read a UTF-8 CSV with a header row.

    Parameters
    ----------
    numeric, categorical : sequences of column names
        Declared schema. With ``numeric=None`` every column not declared
        categorical is parsed as numeric. Undeclared columns are dropped when
        ``numeric`` is given.

    Raises
    ------
    IngestionError
        Empty file, missing declared column, ragged row or non-numeric cell;
        rows are reported as file line numbers (the header is line 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise IngestionError("file is empty or has no header", row=1)
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise IngestionError("file has a header but no data rows", row=2)

    categorical = list(categorical)
    wanted = [h for h in header if h not in categorical] if numeric is None else list(numeric)
    for name in wanted + categorical:
        if name not in header:
            raise IngestionError(f"missing column {name!r}; header has {header}", column=name)

    pos = {h: j for j, h in enumerate(header)}
    lines = [i + 2 for i, r in enumerate(rows[1:]) if any(cell.strip() for cell in r)]
    for line, r in zip(lines, body):
        if len(r) != len(header):
            raise IngestionError(f"expected {len(header)} fields, found {len(r)}", row=line)

    columns = {}
    for name in wanted:
        j = pos[name]
        col = np.empty(len(body))
        for i, (line, r) in enumerate(zip(lines, body)):
            try:
                col[i] = float(r[j])
            except ValueError:
                raise IngestionError(f"non-numeric value {r[j]!r}", row=line, column=name) from None
            if not np.isfinite(col[i]):
                raise IngestionError(f"non-finite value {r[j]!r}", row=line, column=name)
        columns[name] = col
    for name in categorical:
        j = pos[name]
        col = np.array([r[j].strip() for r in body], dtype=object)
        for line, v in zip(lines, col):
            if v == "":
                raise IngestionError("empty categorical cell", row=line, column=name)
        columns[name] = col
    return DataTable(columns=columns, n=len(body), categorical=set(categorical))


def dummies(values, name, reference=None):
    """Reference-coded indicator columns named ``{name}{level}``.

    Levels sort numerically when they all parse as numbers; the reference
    defaults to the first level.

    Returns
    -------
    names : list of str
    matrix : (n, levels - 1) array
    reference : str
    levels : list of str, all levels in sorted order
    """
    values = np.asarray(values, dtype=object).astype(str)
    levels = sorted(set(values.tolist()), key=_level_key)
    if reference is None:
        reference = levels[0]
    reference = str(reference)
    if reference not in levels:
        raise InvalidArgument(f"reference level {reference!r} not observed for {name!r}; levels are {levels}")
    others = [lv for lv in levels if lv != reference]
    M = np.column_stack([(values == lv).astype(float) for lv in others]) if others else np.zeros((len(values), 0))
    return [f"{name}{lv}" for lv in others], M, reference, levels


def model_data(table, spec):
    """Assemble ModelData for a ModelSpec from an ingested table."""
    for name in spec.responses + list(spec.linear) + [s.variable for s in spec.splines]:
        if name not in table.columns or name in table.categorical:
            raise InvalidArgument(f"numeric column {name!r} is not available")
    Y = np.column_stack([table[r] for r in spec.responses])
    cols, names, flags, levels = [], [], [], {}
    for name in spec.linear:
        cols.append(table[name][:, None])
        names.append(name)
        flags.append(False)
    for var, ref in spec.categorical.items():
        if var not in table.categorical:
            raise InvalidArgument(f"categorical column {var!r} is not available")
        dnames, M, ref, lv = dummies(table[var], var, ref)
        cols.append(M)
        names += dnames
        flags += [True] * len(dnames)
        levels[var] = (ref, [v for v in lv if v != ref])
    X = np.hstack(cols) if cols else np.zeros((table.n, 0))
    return ModelData(Y=Y, X=X, x_names=names, dummy=flags,
                     spline_inputs={s.variable: table[s.variable] for s in spec.splines},
                     levels=levels)
