"""JSON model and partition files, search traces, and prediction CSVs."""
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import ValidationError

from grouped_bart.logic.errors import GBartError, ModelFormatError
from grouped_bart.logic.grouping import SearchTrace
from grouped_bart.logic.partition import Partition
from grouped_bart.logic.sampler import ChainDiagnostics, Ensemble, FitResult, McmcConfig, ResponseTransform
from grouped_bart.logic.treecore import RegressionTree

logger = logging.getLogger(__name__)

MODEL_KEYS = ("transform", "partition", "config", "seed", "snapshots", "sigmas")


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")
    return path


def _read_json(path: Path, what: str) -> Any:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        logger.warning("Corrupted %s file at %s", what, path)
        raise ModelFormatError(f"{path}: not a valid {what} file: {e}") from e


def model_to_dict(fit: FitResult, columns: list[str] | None = None, target: str | None = None) -> dict[str, Any]:
    payload = {
        "transform": fit.transform.model_dump(),
        "partition": fit.partition.to_list(),
        "config": fit.config.model_dump(mode="json"),
        "seed": fit.seed,
        "snapshots": [[t.to_dict() for t in e.trees] for e in fit.snapshots],
        "sigmas": [e.sigma for e in fit.snapshots],
        "diagnostics": fit.diagnostics.to_dict(),
    }
    if columns is not None:
        payload["columns"] = list(columns)
    if target is not None:
        payload["target"] = target
    return payload


def model_from_dict(payload: dict[str, Any]) -> FitResult:
    missing = [k for k in MODEL_KEYS if k not in payload]
    if missing:
        raise ModelFormatError(f"model file is missing keys {missing}")
    if len(payload["snapshots"]) != len(payload["sigmas"]):
        raise ModelFormatError("model file has a different number of snapshots and sigmas")
    if not payload["snapshots"]:
        raise ModelFormatError("model file holds no snapshots")
    try:
        snapshots = [
            Ensemble(tuple(RegressionTree.from_dict(t) for t in trees), float(sigma))
            for trees, sigma in zip(payload["snapshots"], payload["sigmas"])
        ]
        return FitResult(
            snapshots=snapshots,
            transform=ResponseTransform.model_validate(payload["transform"]),
            partition=Partition.from_list(payload["partition"]),
            config=McmcConfig.model_validate(payload["config"]),
            seed=int(payload["seed"]),
            diagnostics=ChainDiagnostics.from_dict(payload.get("diagnostics", {})),
        )
    except (KeyError, TypeError, ValidationError, GBartError) as e:
        raise ModelFormatError(f"model file content is inconsistent: {e}") from e


def save_model(fit: FitResult, path: str | Path, columns: list[str] | None = None, target: str | None = None) -> Path:
    """Writes the fitted ensemble; ``columns`` records predictor names for later scoring."""
    path = _write_json(Path(path), model_to_dict(fit, columns, target))
    logger.info("Saved model with %d snapshot(s) to %s", len(fit.snapshots), path)
    return path


def load_model(path: str | Path) -> tuple[FitResult, list[str] | None]:
    """Returns the fitted model and the predictor names it was trained on, if recorded."""
    payload = _read_json(Path(path), "model")
    if not isinstance(payload, dict):
        raise ModelFormatError(f"{path}: model file must hold a JSON object")
    fit = model_from_dict(payload)
    columns = payload.get("columns")
    if columns is not None and len(columns) != fit.partition.num_variables:
        raise ModelFormatError(f"{path}: {len(columns)} column names for {fit.partition.num_variables} predictors")
    return fit, columns


def save_partition(partition: Partition, path: str | Path) -> Path:
    return _write_json(Path(path), partition.to_list())


def load_partition(path: str | Path) -> Partition:
    payload = _read_json(Path(path), "partition")
    if not isinstance(payload, list) or not all(isinstance(g, list) for g in payload):
        raise ModelFormatError(f"{path}: partition must be a JSON array of arrays of indices")
    try:
        return Partition.from_list(payload)
    except (TypeError, ValueError) as e:
        raise ModelFormatError(f"{path}: {e}") from e


def save_trace(trace: SearchTrace, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(trace.to_json_lines())
    return path


def load_trace(path: str | Path) -> SearchTrace:
    try:
        return SearchTrace.from_json_lines(Path(path).read_text())
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"{path}: not a valid search trace: {e}") from e


def save_predictions(predictions: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"prediction": np.asarray(predictions, dtype=float)}).to_csv(path, index=False)
    logger.info("Wrote %d prediction(s) to %s", len(predictions), path)
    return path
