"""
Back-fitting MCMC for the sum-of-trees model.

Each sweep updates the trees one at a time against the partial residuals of
all the others (one grow/prune/change Metropolis-Hastings proposal, then a
conjugate redraw of the leaf values), and finally redraws the noise level.
All work happens on the response scaled onto [-0.5, 0.5].
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.stats import chi2

from grouped_bart.logic.data import Dataset
from grouped_bart.logic.errors import DegenerateResponseError, InvalidInputError
from grouped_bart.logic.partition import Partition
from grouped_bart.logic.treecore import (
    MIN_LEAF_SIZE,
    Change,
    Grow,
    Internal,
    Prune,
    RegressionTree,
    SplitRule,
    apply_move,
    leaf_assignments,
    route_rows,
)

logger = logging.getLogger(__name__)

MOVE_KINDS = ("grow", "prune", "change")


class McmcConfig(BaseModel):
    """Chain length, priors and proposal mix for one back-fitting chain."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_trees: int = Field(200, gt=0, description="Number of trees B in the sum")
    ndpost: int = Field(1000, gt=0, description="Retained post-burn-in sweeps")
    burn_in: int = Field(100, ge=0, description="Discarded initial sweeps")
    alpha: float = Field(0.95, gt=0.0, lt=1.0, description="Split probability at the root")
    beta: float = Field(2.0, ge=0.0, description="Depth penalty of the split probability")
    k: float = Field(2.0, gt=0.0, description="Leaf prior spread divisor")
    nu: float = Field(3.0, gt=0.0, description="Noise prior degrees of freedom")
    q: float = Field(0.90, gt=0.0, lt=1.0, description="Noise prior calibration quantile")
    num_cutpoints: int = Field(100, gt=0, description="Grid size per predictor")
    proposal_probs: tuple[float, float, float] = Field(
        (0.3, 0.3, 0.4), description="Probabilities of grow, prune, change"
    )
    min_leaf_size: int = Field(MIN_LEAF_SIZE, ge=1, description="Fewest observations a leaf may hold")
    fixed_sigma: float | None = Field(None, gt=0.0, description="Pin sigma instead of sampling it")

    @field_validator("proposal_probs")
    @classmethod
    def _probs_sum_to_one(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(p < 0 for p in v):
            raise ValueError("proposal probabilities must be non-negative")
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("grow and prune probabilities must be positive (each reverses the other)")
        if abs(sum(v) - 1.0) > 1e-12:
            raise ValueError(f"proposal probabilities must sum to 1, got {sum(v)}")
        return v

    def with_overrides(self, overrides: Mapping[str, Any]) -> "McmcConfig":
        return McmcConfig.model_validate({**self.model_dump(), **dict(overrides)})


class ResponseTransform(BaseModel):
    """Affine map of the original response onto [-0.5, 0.5]."""
    model_config = ConfigDict(frozen=True)

    y_min: float
    y_max: float

    @model_validator(mode="after")
    def _ordered(self) -> "ResponseTransform":
        if not self.y_max > self.y_min:
            raise ValueError(f"y_max ({self.y_max}) must exceed y_min ({self.y_min})")
        return self

    @property
    def span(self) -> float:
        return self.y_max - self.y_min

    def scale(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_min) / self.span - 0.5

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=float) + 0.5) * self.span + self.y_min


def scale_response(y: np.ndarray) -> tuple[np.ndarray, ResponseTransform]:
    y = np.asarray(y, dtype=float)
    y_min, y_max = float(np.min(y)), float(np.max(y))
    if not y_max > y_min:
        raise DegenerateResponseError(f"response is constant ({y_min}); nothing to fit")
    transform = ResponseTransform(y_min=y_min, y_max=y_max)
    return transform.scale(y), transform


def make_cutpoints(X: np.ndarray, num_cutpoints: int) -> list[np.ndarray]:
    """Per predictor, ``num_cutpoints`` evenly spaced values strictly inside the observed range.

    A constant column gets an empty grid and can never be split on.
    """
    grids = []
    steps = np.arange(1, num_cutpoints + 1) / (num_cutpoints + 1)
    for j in range(X.shape[1]):
        lo, hi = float(X[:, j].min()), float(X[:, j].max())
        grids.append(lo + (hi - lo) * steps if hi > lo else np.empty(0))
    return grids


# --- Conjugate pieces ---

class LeafStats(NamedTuple):
    n: int
    sum_r: float
    sumsq_r: float


def leaf_log_marginal(n_leaf: int, sum_r: float, sumsq_r: float, sigma: float, sigma_mu: float) -> float:
    """log of the integral over mu of prod Normal(r_i; mu, sigma^2) * Normal(mu; 0, sigma_mu^2)."""
    if n_leaf == 0:
        return 0.0
    s2, m2 = sigma * sigma, sigma_mu * sigma_mu
    denom = s2 + n_leaf * m2
    return (
        -0.5 * n_leaf * math.log(2.0 * math.pi * s2)
        + 0.5 * math.log(s2 / denom)
        - sumsq_r / (2.0 * s2)
        + m2 * sum_r * sum_r / (2.0 * s2 * denom)
    )


def draw_leaf_means(n_leaf, sum_r, sigma: float, sigma_mu: float, rng: np.random.Generator, size=None):
    """Draws from the conjugate normal posterior of a leaf mean."""
    precision = np.asarray(n_leaf, dtype=float) + (sigma / sigma_mu) ** 2
    mean = np.asarray(sum_r, dtype=float) / precision
    return rng.normal(mean, sigma / np.sqrt(precision), size=size)


def sample_leaf_values(
        tree: RegressionTree,
        stats: Mapping[int, LeafStats],
        sigma: float,
        sigma_mu: float,
        rng: np.random.Generator,
) -> RegressionTree:
    leaves = tree.leaves
    n = np.array([stats[i].n for i in leaves], dtype=float)
    s = np.array([stats[i].sum_r for i in leaves], dtype=float)
    draws = draw_leaf_means(n, s, sigma, sigma_mu, rng)
    return tree.with_leaf_values(dict(zip(leaves, draws.tolist())))


def sample_sigma(sse: float, n: int, nu: float, lam: float, rng: np.random.Generator, size=None):
    """sqrt of sigma^2 ~ (nu * lam + sse) / chi2(nu + n)."""
    return np.sqrt((nu * lam + sse) / rng.chisquare(nu + n, size=size))


def calibrate_lambda(sigma_hat: float, nu: float, q: float) -> float:
    """Scale that puts prior probability q on sigma < sigma_hat."""
    return float(chi2.ppf(1.0 - q, nu) * sigma_hat ** 2 / nu)


# --- Chain state ---

@dataclass(frozen=True, eq=False)
class Ensemble:
    trees: tuple[RegressionTree, ...]
    sigma: float

    def predict_scaled(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.leaf_value_array()[leaf_assignments(tree, X)]
        return total


@dataclass
class ChainDiagnostics:
    proposed: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MOVE_KINDS, 0))
    accepted: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MOVE_KINDS, 0))
    impossible: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MOVE_KINDS, 0))
    sigma_trace: list[float] = field(default_factory=list)
    depth_trace: list[float] = field(default_factory=list)

    def acceptance_rates(self) -> dict[str, float]:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else 0.0) for k in MOVE_KINDS}

    def to_dict(self) -> dict[str, Any]:
        return {
            "proposed": dict(self.proposed),
            "accepted": dict(self.accepted),
            "impossible": dict(self.impossible),
            "sigma_trace": list(self.sigma_trace),
            "depth_trace": list(self.depth_trace),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ChainDiagnostics":
        return cls(
            proposed=dict(payload.get("proposed", dict.fromkeys(MOVE_KINDS, 0))),
            accepted=dict(payload.get("accepted", dict.fromkeys(MOVE_KINDS, 0))),
            impossible=dict(payload.get("impossible", dict.fromkeys(MOVE_KINDS, 0))),
            sigma_trace=list(payload.get("sigma_trace", [])),
            depth_trace=list(payload.get("depth_trace", [])),
        )


@dataclass(frozen=True, eq=False)
class ChainContext:
    """Everything a tree update reads but never changes."""
    X: np.ndarray
    y: np.ndarray  # scaled response
    cutpoints: list[np.ndarray]
    sigma_mu: float
    lam: float
    config: McmcConfig


@dataclass(eq=False)
class ChainState:
    trees: list[RegressionTree]
    sigma: float
    fit_cache: np.ndarray
    assignments: list[np.ndarray]  # per tree, leaf id of every training row
    diagnostics: ChainDiagnostics = field(default_factory=ChainDiagnostics)


def audit_fit_cache(state: ChainState, X: np.ndarray) -> float:
    """Max absolute gap between the cached fit and a from-scratch recomputation."""
    fresh = np.zeros(X.shape[0])
    for tree in state.trees:
        fresh += tree.leaf_value_array()[leaf_assignments(tree, X)]
    return float(np.max(np.abs(fresh - state.fit_cache)))


def _leaf_stats(assign: np.ndarray, r: np.ndarray, leaves: Sequence[int], size: int) -> dict[int, LeafStats]:
    counts = np.bincount(assign, minlength=size)
    sums = np.bincount(assign, weights=r, minlength=size)
    sumsq = np.bincount(assign, weights=r * r, minlength=size)
    return {i: LeafStats(int(counts[i]), float(sums[i]), float(sumsq[i])) for i in leaves}


def _marginal(rows_r: np.ndarray, sigma: float, sigma_mu: float) -> float:
    return leaf_log_marginal(rows_r.size, float(rows_r.sum()), float(rows_r @ rows_r), sigma, sigma_mu)


def _split_prob(config: McmcConfig, depth: int) -> float:
    return config.alpha * (1.0 + depth) ** (-config.beta)


def _log_grow_prior_ratio(config: McmcConfig, depth: int) -> float:
    """Tree prior ratio for turning a leaf at ``depth`` into a split with two leaves.

    The split-rule prior (uniform variable in the group, uniform cutpoint) is
    identical to the rule proposal and cancels.
    """
    p_here = _split_prob(config, depth)
    p_child = _split_prob(config, depth + 1)
    return math.log(p_here) + 2.0 * math.log1p(-p_child) - math.log1p(-p_here)


def _draw_rule(tree: RegressionTree, ctx: ChainContext, rng: np.random.Generator) -> SplitRule | None:
    group = sorted(tree.group)
    var = group[rng.integers(len(group))]
    cuts = ctx.cutpoints[var]
    if cuts.size == 0:
        return None
    return SplitRule(var, float(cuts[rng.integers(cuts.size)]))


def _propose_grow(tree, assign, r, sigma, ctx, rng):
    cfg = ctx.config
    leaves = tree.leaves
    leaf_id = leaves[rng.integers(len(leaves))]
    rule = _draw_rule(tree, ctx, rng)
    if rule is None:
        return None
    rows = np.flatnonzero(assign == leaf_id)
    go_left = ctx.X[rows, rule.variable] <= rule.threshold
    n_left = int(go_left.sum())
    if n_left < cfg.min_leaf_size or rows.size - n_left < cfg.min_leaf_size:
        return None

    proposed = apply_move(tree, Grow(leaf_id, rule))
    left_id, right_id = tree.next_id, tree.next_id + 1
    new_assign = assign.copy()
    new_assign[rows[go_left]] = left_id
    new_assign[rows[~go_left]] = right_id

    r_leaf = r[rows]
    log_lik = (
        _marginal(r_leaf[go_left], sigma, ctx.sigma_mu)
        + _marginal(r_leaf[~go_left], sigma, ctx.sigma_mu)
        - _marginal(r_leaf, sigma, ctx.sigma_mu)
    )
    p_grow, p_prune, _ = cfg.proposal_probs
    log_proposal = (
        math.log(p_prune) - math.log(len(proposed.prunable_nodes))
        - math.log(p_grow) + math.log(len(leaves))
    )
    depth = tree.nodes[leaf_id].depth
    return proposed, new_assign, log_lik + log_proposal + _log_grow_prior_ratio(cfg, depth)


def _propose_prune(tree, assign, r, sigma, ctx, rng):
    cfg = ctx.config
    prunable = tree.prunable_nodes
    if not prunable:
        return None
    node_id = prunable[rng.integers(len(prunable))]
    node: Internal = tree.nodes[node_id]

    proposed = apply_move(tree, Prune(node_id))
    in_left = assign == node.left
    in_right = assign == node.right
    new_assign = assign.copy()
    new_assign[in_left | in_right] = node_id

    log_lik = (
        _marginal(r[in_left | in_right], sigma, ctx.sigma_mu)
        - _marginal(r[in_left], sigma, ctx.sigma_mu)
        - _marginal(r[in_right], sigma, ctx.sigma_mu)
    )
    p_grow, p_prune, _ = cfg.proposal_probs
    log_proposal = (
        math.log(p_grow) - math.log(proposed.num_leaves)
        - math.log(p_prune) + math.log(len(prunable))
    )
    return proposed, new_assign, log_lik + log_proposal - _log_grow_prior_ratio(cfg, node.depth)


def _propose_change(tree, assign, r, sigma, ctx, rng):
    cfg = ctx.config
    internal = tree.internal_nodes
    if not internal:
        return None
    node_id = internal[rng.integers(len(internal))]
    rule = _draw_rule(tree, ctx, rng)
    if rule is None:
        return None

    proposed = apply_move(tree, Change(node_id, rule))
    sub_leaves = tree.subtree_leaves(node_id)
    rows = np.flatnonzero(np.isin(assign, sub_leaves))
    routed = route_rows(proposed, ctx.X, rows, start=node_id)
    new_counts = np.bincount(routed, minlength=proposed.next_id)
    if any(new_counts[i] < cfg.min_leaf_size for i in sub_leaves):
        return None

    new_assign = assign.copy()
    new_assign[rows] = routed
    r_sub = r[rows]
    old_sub = assign[rows]
    log_lik = sum(
        _marginal(r_sub[routed == i], sigma, ctx.sigma_mu) - _marginal(r_sub[old_sub == i], sigma, ctx.sigma_mu)
        for i in sub_leaves
    )
    return proposed, new_assign, log_lik


_PROPOSALS = {"grow": _propose_grow, "prune": _propose_prune, "change": _propose_change}


def mh_tree_update(b: int, state: ChainState, ctx: ChainContext, rng: np.random.Generator) -> ChainState:
    """One Metropolis-Hastings structural proposal for tree ``b`` plus a leaf value redraw.

    Updates ``state`` in place (trees, assignments, fit_cache, diagnostics) and returns it.
    """
    tree, assign = state.trees[b], state.assignments[b]
    old_contrib = tree.leaf_value_array()[assign]
    r = ctx.y - (state.fit_cache - old_contrib)

    slot = int(np.searchsorted(np.cumsum(ctx.config.proposal_probs), rng.random(), side="right"))
    kind = MOVE_KINDS[min(slot, len(MOVE_KINDS) - 1)]
    diag = state.diagnostics
    diag.proposed[kind] += 1

    proposal = _PROPOSALS[kind](tree, assign, r, state.sigma, ctx, rng)
    if proposal is None:
        diag.impossible[kind] += 1
    else:
        proposed, proposed_assign, log_ratio = proposal
        u = rng.random()
        if log_ratio >= 0.0 or u < math.exp(log_ratio):
            tree, assign = proposed, proposed_assign
            diag.accepted[kind] += 1

    stats = _leaf_stats(assign, r, tree.leaves, tree.next_id)
    tree = sample_leaf_values(tree, stats, state.sigma, ctx.sigma_mu, rng)
    state.fit_cache += tree.leaf_value_array()[assign] - old_contrib
    state.trees[b] = tree
    state.assignments[b] = assign
    return state


# --- Fitted model ---

@dataclass(frozen=True, eq=False)
class FitResult:
    snapshots: list[Ensemble]
    transform: ResponseTransform
    partition: Partition
    config: McmcConfig
    seed: int
    diagnostics: ChainDiagnostics = field(default_factory=ChainDiagnostics)

    def sigmas_original_scale(self) -> list[float]:
        return [e.sigma * self.transform.span for e in self.snapshots]


def predict(fit: FitResult, X: np.ndarray) -> np.ndarray:
    """Posterior mean of the sum of trees per row, on the original response scale."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != fit.partition.num_variables:
        raise InvalidInputError(
            f"model was fit on {fit.partition.num_variables} predictors, got input of shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("predictor values must be finite")
    total = np.zeros(X.shape[0])
    for ensemble in fit.snapshots:
        total += ensemble.predict_scaled(X)
    return fit.transform.inverse(total / len(fit.snapshots))


def variable_usage(fit: FitResult) -> np.ndarray:
    """How many split nodes use each predictor, summed over all retained snapshots."""
    counts = np.zeros(fit.partition.num_variables, dtype=np.int64)
    for ensemble in fit.snapshots:
        for tree in ensemble.trees:
            for i in tree.internal_nodes:
                counts[tree.nodes[i].rule.variable] += 1
    return counts


def constant_fit(data: Dataset, partition: Partition, config: McmcConfig, seed: int) -> FitResult:
    """Fast path for a constant response: all-zero stumps around a unit-width transform."""
    center = float(data.y[0])
    logger.warning("Response is constant (%s); using the mean predictor", center)
    transform = ResponseTransform(y_min=center - 0.5, y_max=center + 0.5)
    groups = partition.groups
    stumps = tuple(RegressionTree.stump(groups[b % len(groups)]) for b in range(config.num_trees))
    ensemble = Ensemble(stumps, 0.0)
    return FitResult([ensemble] * config.ndpost, transform, partition, config, seed)


def init_chain(
        data: Dataset,
        trees: Sequence[RegressionTree],
        config: McmcConfig,
) -> tuple[ChainContext, ChainState, ResponseTransform]:
    """Scaled response, cutpoint grids, calibrated priors and the starting state for ``trees``."""
    if not trees:
        raise InvalidInputError("a chain needs at least one tree")
    y_scaled, transform = scale_response(data.y)
    sigma_hat = float(np.std(y_scaled, ddof=1)) if data.n > 1 else 1.0
    ctx = ChainContext(
        X=data.X,
        y=y_scaled,
        cutpoints=make_cutpoints(data.X, config.num_cutpoints),
        sigma_mu=0.5 / (config.k * math.sqrt(len(trees))),
        lam=calibrate_lambda(sigma_hat, config.nu, config.q),
        config=config,
    )
    assignments = [leaf_assignments(t, data.X) for t in trees]
    fit_cache = np.zeros(data.n)
    for t, a in zip(trees, assignments):
        fit_cache += t.leaf_value_array()[a]
    state = ChainState(
        trees=list(trees),
        sigma=config.fixed_sigma if config.fixed_sigma is not None else sigma_hat,
        fit_cache=fit_cache,
        assignments=assignments,
    )
    return ctx, state, transform


def sweep(state: ChainState, ctx: ChainContext, rng: np.random.Generator) -> ChainState:
    """Every tree once, in order, then the noise level."""
    config = ctx.config
    for b in range(len(state.trees)):
        mh_tree_update(b, state, ctx, rng)
    if config.fixed_sigma is None:
        sse = float(np.sum((ctx.y - state.fit_cache) ** 2))
        state.sigma = float(sample_sigma(sse, ctx.y.size, config.nu, ctx.lam, rng))
    state.diagnostics.sigma_trace.append(state.sigma)
    state.diagnostics.depth_trace.append(float(np.mean([t.max_depth for t in state.trees])))
    return state


def run_chain(
        data: Dataset,
        trees: Sequence[RegressionTree],
        config: McmcConfig,
        seed: int,
        partition: Partition | None = None,
        rng: np.random.Generator | None = None,
) -> FitResult:
    """Run ``burn_in + ndpost`` back-fitting sweeps and keep one snapshot per post-burn-in sweep.

    ``rng`` lets a caller continue a stream it already drew from (seeded from
    ``seed``); otherwise a fresh stream is seeded from ``seed``.
    """
    ctx, state, transform = init_chain(data, trees, config)
    if partition is None:
        partition = Partition.from_groups(dict.fromkeys(t.group for t in trees), data.p)
    if rng is None:
        rng = np.random.default_rng(seed)

    total = config.burn_in + config.ndpost
    report_every = max(1, total // 10)
    snapshots: list[Ensemble] = []
    for i in range(total):
        sweep(state, ctx, rng)
        if i >= config.burn_in:
            snapshots.append(Ensemble(tuple(state.trees), state.sigma))
        if (i + 1) % report_every == 0:
            logger.debug("sweep %d/%d sigma=%.4f acceptance=%s", i + 1, total, state.sigma,
                         state.diagnostics.acceptance_rates())

    return FitResult(snapshots, transform, partition, config, int(seed), state.diagnostics)
