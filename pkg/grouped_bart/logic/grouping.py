"""
Variable grouping on top of the sampler.

fit_grouped assigns every tree a group drawn uniformly from a partition and
keeps it fixed for the whole chain. isg_search discovers a partition greedily,
one pair of interacting variables per round, by comparing validation errors of
stage-1 fits. gbart_fit chains the two: search on the data, then refit on all
of it with the discovered partition.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from grouped_bart.logic.data import Dataset, train_val_split
from grouped_bart.logic.errors import DegenerateResponseError, InsufficientDataError, InvalidPartitionError
from grouped_bart.logic.partition import Partition
from grouped_bart.logic.sampler import FitResult, McmcConfig, constant_fit, predict, run_chain
from grouped_bart.logic.seeding import derive_seed
from grouped_bart.logic.treecore import RegressionTree

logger = logging.getLogger(__name__)

MIN_SEARCH_ROWS = 20
SPLIT_TAG = 0
STAGE1_TAG = 1
STAGE2_TAG = 2


class GroupSearchConfig(BaseModel):
    """Settings of the interaction search and of the two-stage fit."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    stage1_trees: int = Field(100, gt=0, description="Trees per candidate fit during the search")
    stage2_trees: int = Field(200, gt=0, description="Trees in the final grouped fit")
    val_fraction: float = Field(0.2, gt=0.0, lt=1.0, description="Share of rows held out for validation")
    stage1_mcmc: dict[str, Any] = Field(default_factory=dict, description="McmcConfig overrides for candidate fits")
    max_rounds: int = Field(10, gt=0, description="Cap on accepted pairs")
    enabled: bool = Field(True, description="False returns the trivial partition without searching")
    workers: int = Field(1, ge=1, description="Concurrent candidate fits")

    def stage1_config(self, base: McmcConfig) -> McmcConfig:
        return base.with_overrides({**self.stage1_mcmc, "num_trees": self.stage1_trees})


# --- grouped trees ---

def _grouped_stumps(partition: Partition, num_trees: int, rng: np.random.Generator) -> list[RegressionTree]:
    # integers(1) draws nothing: a one-group partition leaves the stream as run_chain would seed it
    groups = partition.groups
    return [RegressionTree.stump(groups[int(rng.integers(len(groups)))]) for _ in range(num_trees)]


def fit_grouped(train: Dataset, partition: Partition, num_trees: int, mcmc: McmcConfig, seed: int) -> FitResult:
    if partition.num_variables != train.p:
        raise InvalidPartitionError(
            f"partition covers {partition.num_variables} variables but the data has {train.p}"
        )
    config = mcmc if mcmc.num_trees == num_trees else mcmc.with_overrides({"num_trees": num_trees})
    rng = np.random.default_rng(seed)
    trees = _grouped_stumps(partition, num_trees, rng)
    try:
        return run_chain(train, trees, config, seed, partition=partition, rng=rng)
    except DegenerateResponseError:
        return constant_fit(train, partition, config, seed)


def fit_bart(train: Dataset, num_trees: int, mcmc: McmcConfig, seed: int) -> FitResult:
    """Plain BART: every tree may split on every predictor."""
    return fit_grouped(train, Partition.trivial(train.p), num_trees, mcmc, seed)


def validation_error(train: Dataset, val: Dataset, partition: Partition, mcmc: McmcConfig, seed: int) -> float:
    fit = fit_grouped(train, partition, mcmc.num_trees, mcmc, seed)
    return float(np.mean((predict(fit, val.X) - val.y) ** 2))


# --- interaction search ---

@dataclass
class RoundRecord:
    round: int
    e0: float
    ei: dict[int, float]
    i_star: int
    ek: dict[int, float]
    k_star: int
    accepted: bool

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["ei"] = {str(k): v for k, v in self.ei.items()}
        payload["ek"] = {str(k): v for k, v in self.ek.items()}
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "RoundRecord":
        return cls(
            round=int(payload["round"]),
            e0=float(payload["e0"]),
            ei={int(k): float(v) for k, v in payload["ei"].items()},
            i_star=int(payload["i_star"]),
            ek={int(k): float(v) for k, v in payload["ek"].items()},
            k_star=int(payload["k_star"]),
            accepted=bool(payload["accepted"]),
        )


@dataclass
class SearchTrace:
    rounds: list[RoundRecord] = field(default_factory=list)

    def accepted_pairs(self) -> list[frozenset[int]]:
        return [frozenset((r.i_star, r.k_star)) for r in self.rounds if r.accepted]

    def to_json_lines(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.rounds)

    @classmethod
    def from_json_lines(cls, text: str) -> "SearchTrace":
        return cls([RoundRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()])


def _candidate(accepted: Sequence[frozenset[int]], extra: Iterable[Iterable[int]], p: int) -> Partition:
    groups = list(accepted) + [frozenset(g) for g in extra]
    return Partition.from_groups([g for g in groups if g], p)


def isg_search(
        data: Dataset,
        cfg: GroupSearchConfig,
        seed: int,
        mcmc: McmcConfig | None = None,
) -> tuple[Partition, SearchTrace]:
    """Greedy search for pairs of interacting predictors.

    Each round fits the current benchmark partition (accepted pairs plus the
    remaining variables as one group), isolates every remaining variable in
    turn, picks the one whose isolation hurts validation error most, then pairs
    it with each other remaining variable and keeps the best pair if it beats
    the benchmark. Stops at the first rejected round or when fewer than two
    variables remain.
    """
    if not cfg.enabled:
        return Partition.trivial(data.p), SearchTrace()
    if data.p < 2:
        raise InsufficientDataError(f"grouping needs at least 2 predictors, got {data.p}")
    if data.n < MIN_SEARCH_ROWS:
        raise InsufficientDataError(f"grouping needs at least {MIN_SEARCH_ROWS} rows, got {data.n}")

    p = data.p
    stage1 = cfg.stage1_config(mcmc or McmcConfig())
    train, val = train_val_split(data, cfg.val_fraction, derive_seed(seed, SPLIT_TAG, 0))
    accepted: list[frozenset[int]] = []
    remaining = list(range(p))
    trace = SearchTrace()

    with Parallel(n_jobs=cfg.workers) as parallel:
        def errors_of(round_no: int, jobs: list[tuple[int, Partition]]) -> list[float]:
            return parallel(
                delayed(validation_error)(train, val, part, stage1, derive_seed(seed, round_no, cid))
                for cid, part in jobs
            )

        while len(remaining) >= 2 and len(trace.rounds) < cfg.max_rounds:
            round_no = len(trace.rounds) + 1
            rest = frozenset(remaining)
            jobs = [(0, _candidate(accepted, [rest], p))]
            jobs += [(1 + i, _candidate(accepted, [{i}, rest - {i}], p)) for i in remaining]
            errors = errors_of(round_no, jobs)
            e0, ei = errors[0], dict(zip(remaining, errors[1:]))
            i_star = max(remaining, key=lambda i: (ei[i], -i))

            partners = [k for k in remaining if k != i_star]
            pair_jobs = [(1 + p + k, _candidate(accepted, [{i_star, k}, rest - {i_star, k}], p)) for k in partners]
            ek = dict(zip(partners, errors_of(round_no, pair_jobs)))
            k_star = min(partners, key=lambda k: (ek[k], k))

            is_accepted = ek[k_star] < e0
            trace.rounds.append(RoundRecord(round_no, e0, ei, i_star, ek, k_star, is_accepted))
            logger.info(
                "round %d: e0=%.4f i*=%d k*=%d e'=%.4f -> %s",
                round_no, e0, i_star, k_star, ek[k_star], "accepted" if is_accepted else "stop",
            )
            if not is_accepted:
                break
            accepted.append(frozenset((i_star, k_star)))
            remaining = [v for v in remaining if v not in (i_star, k_star)]

    if remaining:
        accepted.append(frozenset(remaining))
    partition = Partition.from_groups(accepted, p)
    logger.info("discovered partition %s after %d round(s)", partition, len(trace.rounds))
    return partition, trace


# --- two-stage fit ---

def stage_seeds(seed: int) -> tuple[int, int]:
    return derive_seed(seed, STAGE1_TAG), derive_seed(seed, STAGE2_TAG)


def gbart_fit(
        data: Dataset,
        cfg: GroupSearchConfig,
        mcmc: McmcConfig,
        seed: int,
) -> tuple[FitResult, Partition, SearchTrace]:
    search_seed, fit_seed = stage_seeds(seed)
    partition, trace = isg_search(data, cfg, search_seed, mcmc)
    fit = fit_grouped(data, partition, cfg.stage2_trees, mcmc, fit_seed)
    return fit, partition, trace
