"""
Datasets: synthetic generators for the twelve benchmark functions, CSV
ingestion for real data, and seeded splitting (k folds, train/validation).
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from grouped_bart.logic.errors import (
    CsvParseError,
    InsufficientDataError,
    InvalidCaseError,
    InvalidFoldError,
    InvalidInputError,
    SchemaError,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_SIZE = 500


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...] | None = None
    target_name: str = "y"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1:
            raise InvalidInputError(f"expected X of shape (n, p) and y of shape (n,), got {X.shape} and {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"dataset needs n >= 1 and p >= 1, got shape {X.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset values must be finite")
        if self.names is not None and len(self.names) != X.shape[1]:
            raise InvalidInputError(f"{len(self.names)} column names for {X.shape[1]} predictors")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column_names(self) -> list[str]:
        return list(self.names) if self.names is not None else [f"x{j + 1}" for j in range(self.p)]

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.y[rows], self.names, self.target_name)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=self.column_names())
        frame[self.target_name] = self.y
        return frame


# --- Synthetic generators ---

@dataclass(frozen=True)
class SyntheticCase:
    p: int
    noise_sd: float
    formula: Callable[[np.ndarray], np.ndarray]
    description: str


def _tail(x: np.ndarray) -> np.ndarray:
    return x[:, 6:20].sum(axis=1)


def _tail_sq(x: np.ndarray) -> np.ndarray:
    return (x[:, 6:20] ** 2).sum(axis=1)


# x[:, 0] is x1 in the formulas' notation
CASES: dict[int, SyntheticCase] = {
    1: SyntheticCase(6, 0.5, lambda x: (x[:, 0] + x[:, 1]) ** 2 + (x[:, 2] + x[:, 3]) ** 2 + (x[:, 4] + x[:, 5]) ** 2,
                     "(x1+x2)^2 + (x3+x4)^2 + (x5+x6)^2"),
    2: SyntheticCase(6, 0.5, lambda x: x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3] + x[:, 4] * x[:, 5],
                     "x1x2 + x3x4 + x5x6"),
    3: SyntheticCase(6, 0.5, lambda x: x[:, 0] * x[:, 1] + x[:, 2] + x[:, 3] + x[:, 4],
                     "x1x2 + x3 + x4 + x5"),
    4: SyntheticCase(6, 0.5, lambda x: x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3] + x[:, 4] + x[:, 5],
                     "x1x2 + x3x4 + x5 + x6"),
    5: SyntheticCase(6, 0.5, lambda x: np.sin(x[:, 0]) * np.sin(x[:, 1]) + (x[:, 2] + x[:, 3]) ** 2
                     + (x[:, 4] + x[:, 5]) ** 2,
                     "sin x1 sin x2 + (x3+x4)^2 + (x5+x6)^2"),
    6: SyntheticCase(20, 0.5, lambda x: 5 * (x[:, 0] + x[:, 1]) ** 2 + (x[:, 2] + x[:, 3]) ** 2
                     + 0.2 * (x[:, 4] + x[:, 5]) ** 2 + 0.04 * _tail_sq(x),
                     "5(x1+x2)^2 + (x3+x4)^2 + 0.2(x5+x6)^2 + 0.04(x7^2+...+x20^2)"),
    7: SyntheticCase(20, 0.5, lambda x: 5 * x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3] + 0.2 * x[:, 4] * x[:, 5]
                     + 0.04 * _tail(x),
                     "5x1x2 + x3x4 + 0.2x5x6 + 0.04(x7+...+x20)"),
    8: SyntheticCase(20, 0.5, lambda x: 5 * np.sin(x[:, 0]) * np.sin(x[:, 1]) + (x[:, 2] + x[:, 3]) ** 2
                     + 0.2 * (x[:, 4] + x[:, 5]) ** 2 + 0.04 * _tail(x),
                     "5 sin x1 sin x2 + (x3+x4)^2 + 0.2(x5+x6)^2 + 0.04(x7+...+x20)"),
    9: SyntheticCase(20, 0.5, lambda x: 5 * np.sin(x[:, 0]) * np.sin(x[:, 1]) + x[:, 2] * x[:, 3]
                     + 0.2 * x[:, 4] * x[:, 5] + 0.04 * _tail(x),
                     "5 sin x1 sin x2 + x3x4 + 0.2x5x6 + 0.04(x7+...+x20)"),
    10: SyntheticCase(20, 0.5, lambda x: 5 * (x[:, 0] + x[:, 1]) ** 2 + (x[:, 2] + x[:, 3]) ** 2
                      + 0.2 * (x[:, 4] + x[:, 5]) ** 2,
                      "5(x1+x2)^2 + (x3+x4)^2 + 0.2(x5+x6)^2"),
    11: SyntheticCase(20, 0.5, lambda x: 5 * x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3] + 0.2 * x[:, 4] * x[:, 5],
                      "5x1x2 + x3x4 + 0.2x5x6"),
    12: SyntheticCase(7, 1.0, lambda x: 10 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20 * (x[:, 2] - 0.5) ** 2
                      + 10 * x[:, 3] + 5 * x[:, 4],
                      "Friedman: 10 sin(pi x1x2) + 20(x3-0.5)^2 + 10x4 + 5x5 (x6, x7 inert)"),
}


def _case(case: int) -> SyntheticCase:
    if case not in CASES:
        raise InvalidCaseError(f"synthetic case must be in 1..12, got {case}")
    return CASES[case]


def noiseless_response(case: int, X: np.ndarray) -> np.ndarray:
    """The generating function of ``case`` evaluated without noise."""
    definition = _case(case)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] < definition.p:
        raise InvalidInputError(f"case {case} needs {definition.p} predictors, got {X.shape[1]}")
    return definition.formula(X)


def generate_synthetic(case: int, n: int = DEFAULT_SAMPLE_SIZE, seed: int = 0, noise: bool = True) -> Dataset:
    """Draw ``n`` observations of benchmark function ``case``.

    Cases 1-11: x1..x6 iid Normal(1, 1), x7..x20 iid Uniform[0, 1] where p = 20,
    noise Normal(0, 0.5^2). Case 12: all seven predictors Uniform[0, 1], noise
    Normal(0, 1). ``noise=False`` is for golden tests only.
    """
    definition = _case(case)
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if case == 12:
        X = rng.uniform(0.0, 1.0, size=(n, definition.p))
    else:
        normal_part = rng.normal(1.0, 1.0, size=(n, 6))
        uniform_part = rng.uniform(0.0, 1.0, size=(n, definition.p - 6))
        X = np.hstack([normal_part, uniform_part])
    y = definition.formula(X)
    if noise:
        y = y + rng.normal(0.0, definition.noise_sd, size=n)
    return Dataset(X, y)


# --- CSV ---

SLUMP_INPUTS = ("Cement", "Slag", "Fly ash", "Water", "SP", "Coarse Aggr.", "Fine Aggr.")
SLUMP_OUTPUTS = ("SLUMP(cm)", "FLOW(cm)", "Compressive Strength (28-day)(Mpa)")
SLUMP_INDEX_COLUMN = "No"


def _resolve_column(columns: list[str], ref: str | int, what: str) -> str:
    if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
        if not 0 <= ref < len(columns):
            raise SchemaError(f"{what} index {ref} out of range for {len(columns)} columns")
        return columns[ref]
    ref = str(ref).strip()
    if ref.lstrip("-").isdigit() and ref not in columns:
        return _resolve_column(columns, int(ref), what)
    if ref not in columns:
        raise SchemaError(f"{what} column {ref!r} not found; available: {columns}")
    return ref


_PARSER_LINE = re.compile(r"line (\d+)")


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise SchemaError(f"{path}: no header row") from e
    except pd.errors.ParserError as e:
        found = _PARSER_LINE.search(str(e))
        row = int(found.group(1)) if found else 0
        raise CsvParseError(f"{path}: malformed row at line {row}: {e}", row=row, column="") from e
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def _numeric_column(frame: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    raw = frame[column].str.strip()
    # exact parse: a value written by save_csv reads back bit for bit
    parsed = raw.map(_to_float).to_numpy(dtype=float)
    bad = ~np.isfinite(parsed)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        # +2: one for the header line, one for 1-based numbering
        raise CsvParseError(
            f"{path}: cell at line {i + 2}, column {column!r} is not a finite number: {raw.iloc[i]!r}",
            row=i + 2, column=column,
        )
    return parsed


def load_csv(path: str | Path, target_column: str | int, drop_columns: Sequence[str | int] | None = None) -> Dataset:
    """Read a header-first, comma-separated numeric file into a Dataset.

    Predictors are every column except the target and the dropped ones, in file order.
    """
    path = Path(path)
    frame = _read_frame(path)
    columns = list(frame.columns)

    target = _resolve_column(columns, target_column, "target")
    dropped = {_resolve_column(columns, c, "drop") for c in (drop_columns or [])}
    if target in dropped:
        raise SchemaError(f"target column {target!r} is also listed in drop_columns")
    predictors = [c for c in columns if c != target and c not in dropped]
    if not predictors:
        raise SchemaError(f"{path}: no predictor columns left after removing target and dropped columns")

    values = {column: _numeric_column(frame, column, path) for column in predictors + [target]}

    if len(frame) == 0:
        raise SchemaError(f"{path}: header present but no data rows")
    X = np.column_stack([values[c] for c in predictors])
    logger.info("Loaded %s: n=%d, p=%d, target=%s", path, X.shape[0], X.shape[1], target)
    return Dataset(X, values[target], tuple(predictors), target)


def load_predictors(path: str | Path, columns: Sequence[str] | None, num_predictors: int) -> np.ndarray:
    """Predictor matrix for scoring a fitted model.

    With ``columns`` the named columns are taken in that order (any other
    column, such as the target, is ignored); without names the first
    ``num_predictors`` columns are used.
    """
    path = Path(path)
    frame = _read_frame(path)
    available = list(frame.columns)
    if columns is None:
        if len(available) < num_predictors:
            raise SchemaError(f"{path}: model needs {num_predictors} predictor columns, file has {len(available)}")
        columns = available[:num_predictors]
    missing = [c for c in columns if c not in available]
    if missing:
        raise SchemaError(f"{path}: missing predictor columns {missing}")
    if len(frame) == 0:
        raise SchemaError(f"{path}: header present but no data rows")
    return np.column_stack([_numeric_column(frame, c, path) for c in columns])


def load_slump(path: str | Path, target: str | int = 0) -> Dataset:
    """Concrete slump file: one output as target, the other two outputs and the row index dropped."""
    if isinstance(target, int):
        if not 0 <= target < len(SLUMP_OUTPUTS):
            raise SchemaError(f"slump target index must be 0..2, got {target}")
        target = SLUMP_OUTPUTS[target]
    if target not in SLUMP_OUTPUTS:
        raise SchemaError(f"slump target must be one of {SLUMP_OUTPUTS}, got {target!r}")
    header = [c.strip() for c in pd.read_csv(path, nrows=0, skipinitialspace=True).columns]
    drop = [c for c in SLUMP_OUTPUTS if c != target]
    if SLUMP_INDEX_COLUMN in header:
        drop.append(SLUMP_INDEX_COLUMN)
    return load_csv(path, target, drop)


def save_csv(data: Dataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data.to_frame().to_csv(path, index=False)
    logger.info("Wrote %d rows to %s", data.n, path)
    return path


# --- Splits ---

@dataclass(frozen=True, eq=False)
class FoldSpec:
    k: int
    assignments: np.ndarray

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def kfold_split(n: int, k: int, seed: int) -> FoldSpec:
    """Seeded permutation of 0..n-1 dealt round-robin into k folds."""
    if not 2 <= k <= n:
        raise InvalidFoldError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    return FoldSpec(k, assignments)


def train_val_split(data: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded permutation; the last ceil(n * val_fraction) rows become validation."""
    if not 0.0 < val_fraction < 1.0:
        raise InvalidInputError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = math.ceil(data.n * val_fraction - 1e-9)
    if n_val < 1 or n_val >= data.n:
        raise InsufficientDataError(
            f"cannot split n={data.n} with val_fraction={val_fraction} into two nonempty parts"
        )
    perm = np.random.default_rng(seed).permutation(data.n)
    cut = data.n - n_val
    return data.subset(perm[:cut]), data.subset(perm[cut:])
