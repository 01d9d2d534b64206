"""
Cross-validated GBART-vs-BART comparisons with replications.

Every (dataset, method, replication) cell is an independent job whose seeds
derive only from the master seed and the cell's own coordinates, so results
do not depend on plan order or on the number of workers.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from grouped_bart.logic.data import DEFAULT_SAMPLE_SIZE, Dataset, generate_synthetic, kfold_split, load_csv, load_slump
from grouped_bart.logic.errors import BenchmarkError, ConfigError
from grouped_bart.logic.grouping import GroupSearchConfig, fit_bart, gbart_fit, stage_seeds
from grouped_bart.logic.sampler import McmcConfig, predict
from grouped_bart.logic.seeding import derive_seed

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["dataset", "method", "mean_mse", "std_err", "replications", "wall_time_s"]


class Method(str, Enum):
    GBART = "GBART"
    BART = "BART"


class DatasetSpec(BaseModel):
    """One benchmark dataset: a synthetic case with a sample size, or a CSV file with a target."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["synthetic", "csv", "slump"]
    case: int | None = Field(None, ge=1, le=12)
    n: int = Field(DEFAULT_SAMPLE_SIZE, ge=2)
    path: str | None = None
    target: str | None = None
    drop: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _complete(self) -> "DatasetSpec":
        if self.kind == "synthetic" and self.case is None:
            raise ValueError("synthetic datasets need a case")
        if self.kind != "synthetic" and (self.path is None or self.target is None):
            raise ValueError(f"{self.kind} datasets need a path and a target")
        return self

    @property
    def id(self) -> str:
        if self.kind == "synthetic":
            return f"case{self.case}_n{self.n}"
        return f"{Path(self.path).stem}:{self.target}"

    @classmethod
    def parse(cls, text: str) -> "DatasetSpec":
        """``case:2[:500]``, ``csv:path:target[:drop1|drop2]`` or ``slump:path:target``."""
        parts = [p.strip() for p in text.strip().split(":")]
        try:
            if parts[0] == "case" and len(parts) in (2, 3):
                n = int(parts[2]) if len(parts) == 3 else DEFAULT_SAMPLE_SIZE
                return cls(kind="synthetic", case=int(parts[1]), n=n)
            if parts[0] in ("csv", "slump") and len(parts) in (3, 4):
                drop = tuple(d for d in parts[3].split("|") if d) if len(parts) == 4 else ()
                return cls(kind=parts[0], path=parts[1], target=parts[2], drop=drop)
        except ValueError as e:
            raise ConfigError(f"bad dataset entry {text!r}: {e}") from e
        raise ConfigError(f"bad dataset entry {text!r}; expected case:N[:n], csv:path:target[:drop|...] "
                          f"or slump:path:target")

    def load(self) -> Dataset | None:
        """The fixed dataset for file-backed specs; None for synthetic ones (drawn per replication)."""
        if self.kind == "csv":
            return load_csv(self.path, self.target, list(self.drop))
        if self.kind == "slump":
            return load_slump(self.path, int(self.target) if self.target.isdigit() else self.target)
        return None


class BenchmarkPlan(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    datasets: list[DatasetSpec] = Field(..., min_length=1)
    methods: list[Method] = Field(default_factory=lambda: [Method.GBART, Method.BART], min_length=1)
    folds: int = Field(5, ge=2)
    replications: int = Field(5, ge=1)
    master_seed: int = Field(0, ge=0)
    mcmc: McmcConfig = Field(default_factory=McmcConfig)
    search: GroupSearchConfig = Field(default_factory=GroupSearchConfig)
    workers: int = Field(1, ge=1)
    record_wall_time: bool = True


@dataclass
class ResultRow:
    dataset: str
    method: str
    mean_mse: float
    std_err: float
    replication_mses: list[float]
    wall_time_s: float

    @property
    def replications(self) -> int:
        return len(self.replication_mses)

    @classmethod
    def from_replications(cls, dataset: str, method: str, mses: list[float], wall_time_s: float) -> "ResultRow":
        values = np.asarray(mses, dtype=float)
        if values.size == 1:
            logger.warning("%s/%s: one replication, standard error reported as 0", dataset, method)
            std_err = 0.0
        else:
            std_err = float(np.std(values, ddof=1) / np.sqrt(values.size))
        return cls(dataset, method, float(np.mean(values)), std_err, [float(v) for v in mses], wall_time_s)


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def row(self, dataset: str, method: Method | str) -> ResultRow:
        method = Method(method).value
        for r in self.rows:
            if r.dataset == dataset and r.method == method:
                return r
        raise KeyError((dataset, method))

    def paired_wins(self, dataset: str, better: Method | str, worse: Method | str) -> int:
        """Replications in which ``better`` had strictly lower MSE than ``worse``."""
        a, b = self.row(dataset, better).replication_mses, self.row(dataset, worse).replication_mses
        return sum(x < y for x, y in zip(a, b))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.dataset, r.method, r.mean_mse, r.std_err, r.replications, r.wall_time_s] for r in self.rows],
            columns=RESULT_COLUMNS,
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {"rows": [
            {
                "dataset": r.dataset,
                "method": r.method,
                "mean_mse": r.mean_mse,
                "std_err": r.std_err,
                "replications": r.replications,
                "wall_time_s": r.wall_time_s,
                "replication_mses": r.replication_mses,
            }
            for r in self.rows
        ]}

    def write(self, csv_path: str | Path | None = None, json_path: str | Path | None = None) -> None:
        if csv_path is not None:
            Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
            self.to_frame().to_csv(csv_path, index=False)
        if json_path is not None:
            Path(json_path).parent.mkdir(parents=True, exist_ok=True)
            Path(json_path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def evaluate_method(
        data: Dataset,
        method: Method | str,
        folds: int,
        mcmc: McmcConfig,
        search_cfg: GroupSearchConfig,
        seed: int,
        fold_seed: int | None = None,
) -> float:
    """k-fold cross-validated MSE pooled over all held-out rows.

    BART uses the stage-2 tree count and the stage-2 seed GBART would use for
    the same fold, so GBART with the search disabled reproduces it exactly.
    """
    method = Method(method)
    split = kfold_split(data.n, folds, derive_seed(seed, "folds") if fold_seed is None else fold_seed)
    squared = np.empty(data.n)
    for fold in range(folds):
        test_rows = split.indices(fold)
        train, test = data.subset(split.train_indices(fold)), data.subset(test_rows)
        fit_seed = derive_seed(seed, fold)
        if method is Method.GBART:
            fit, _, _ = gbart_fit(train, search_cfg, mcmc, fit_seed)
        else:
            fit = fit_bart(train, search_cfg.stage2_trees, mcmc, stage_seeds(fit_seed)[1])
        squared[test_rows] = (predict(fit, test.X) - test.y) ** 2
    return float(np.mean(squared))


def _run_cell(spec: DatasetSpec, fixed: Dataset | None, method: Method, rep: int, plan: BenchmarkPlan,
              search_cfg: GroupSearchConfig) -> tuple[float, float]:
    # data and folds are shared by both methods of a replication; fits are per method
    data_seed = derive_seed(plan.master_seed, spec.id, rep)
    cell_seed = derive_seed(plan.master_seed, spec.id, method.value, rep)
    started = time.perf_counter()
    try:
        data = fixed if fixed is not None else generate_synthetic(spec.case, spec.n, data_seed)
        mse = evaluate_method(data, method, plan.folds, plan.mcmc, search_cfg, cell_seed,
                              fold_seed=derive_seed(data_seed, "folds"))
    except Exception as e:
        raise BenchmarkError(f"dataset {spec.id}, method {method.value}, replication {rep}: {e}") from e
    elapsed = time.perf_counter() - started
    logger.info("%s %s rep %d: mse=%.4f (%.1fs)", spec.id, method.value, rep, mse, elapsed)
    return mse, elapsed


def run_benchmark(plan: BenchmarkPlan) -> ResultTable:
    fixed = {spec.id: spec.load() for spec in plan.datasets}
    # cells run concurrently, so candidate fits inside a cell stay sequential
    search_cfg = plan.search if plan.workers == 1 else plan.search.model_copy(update={"workers": 1})
    cells = [(spec, method, rep) for spec in plan.datasets for method in plan.methods
             for rep in range(plan.replications)]
    logger.info("running %d benchmark cells on %d worker(s)", len(cells), plan.workers)

    outcomes = Parallel(n_jobs=plan.workers)(
        delayed(_run_cell)(spec, fixed[spec.id], method, rep, plan, search_cfg) for spec, method, rep in cells
    )

    grouped: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for (spec, method, _), outcome in zip(cells, outcomes):
        grouped.setdefault((spec.id, method.value), []).append(outcome)
    table = ResultTable()
    for (dataset, method), results in grouped.items():
        wall = sum(w for _, w in results) if plan.record_wall_time else 0.0
        table.rows.append(ResultRow.from_replications(dataset, method, [m for m, _ in results], wall))
    return table
