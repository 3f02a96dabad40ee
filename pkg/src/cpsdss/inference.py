"""Exact inference over the exposure and impact networks.

Both networks share the model's structure and differ only in each node's
activation value. Every CPT is an OR gate: a node can only activate when at
least one parent is active (root nodes activate with their prior), and does so
with its dimension-specific activation probability. Queries run exact
variable elimination with a min-degree ordering.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .impact import Portfolio, RiskSummary, risk_adjusted_failure, structural_impact, vuln_impact
from .model import BnModel, EvidenceSet, ModelError, NodeKind, UnknownNodeError, validate_evidence
from .scoring import (
    CalibrationConfig,
    EpssSnapshot,
    NoScoringSource,
    attack_probability,
    vuln_exposure,
)

DIMENSIONS = ("exposure", "impact")


class InferenceError(ModelError):
    pass


class InconsistentEvidenceError(InferenceError):
    """The supplied evidence has zero probability under the network."""


@dataclass(frozen=True)
class Factor:
    """A nonnegative table over binary variables.

    Axes follow ``scope`` order. Tables may carry extra leading batch axes
    (used by the batched portfolio evaluator); the trailing axes always match
    the scope.
    """

    scope: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=float)
        if table.shape[table.ndim - len(self.scope):] != (2,) * len(self.scope):
            raise InferenceError(
                f"table shape {table.shape} does not end in (2,)*{len(self.scope)} for scope {self.scope}")
        if len(set(self.scope)) != len(self.scope):
            raise InferenceError(f"duplicate variables in scope {self.scope}")
        object.__setattr__(self, "table", table)

    @property
    def batch_ndim(self) -> int:
        return self.table.ndim - len(self.scope)

    def _axis(self, var: str) -> int:
        return self.batch_ndim + self.scope.index(var)

    def multiply(self, other: "Factor") -> "Factor":
        joint = self.scope + tuple(v for v in other.scope if v not in self.scope)
        return Factor(joint, self._aligned(joint) * other._aligned(joint))

    def _aligned(self, joint: tuple[str, ...]) -> np.ndarray:
        """Table broadcast to (batch..., joint...) axis order."""
        batch = self.batch_ndim
        present = [v for v in joint if v in self.scope]
        perm = list(range(batch)) + [self._axis(v) for v in present]
        table = np.transpose(self.table, perm)
        shape = list(table.shape[:batch]) + [2 if v in self.scope else 1 for v in joint]
        return table.reshape(shape)

    def marginalize(self, var: str) -> "Factor":
        axis = self._axis(var)
        scope = tuple(v for v in self.scope if v != var)
        return Factor(scope, self.table.sum(axis=axis))

    def reduce(self, var: str, state: int) -> "Factor":
        axis = self._axis(var)
        scope = tuple(v for v in self.scope if v != var)
        return Factor(scope, np.take(self.table, state, axis=axis))

    def normalized(self) -> "Factor":
        axes = tuple(range(self.batch_ndim, self.table.ndim))
        total = self.table.sum(axis=axes, keepdims=True)
        return Factor(self.scope, self.table / total)


@dataclass(frozen=True)
class QueryResult:
    node: str
    dimension: str
    marginal: tuple[float, float]

    def __post_init__(self) -> None:
        p0, p1 = self.marginal
        if not (0.0 <= p0 <= 1.0 and 0.0 <= p1 <= 1.0) or abs(p0 + p1 - 1.0) > 1e-9:
            raise InferenceError(f"marginal {self.marginal} is not a distribution")


def activation_value(
    node_id: str,
    model: BnModel,
    portfolio: Portfolio,
    dimension: str,
    snapshot: EpssSnapshot | None = None,
    config: CalibrationConfig | None = None,
    mode: str = "epss-direct",
) -> float:
    """Per-node activation probability used by the OR-gate CPTs."""
    node = model.node(node_id)
    if dimension == "exposure":
        if node.kind is NodeKind.VULNERABILITY:
            exposure, _ = vuln_exposure(node.attrs, config, snapshot, mode)
            attack = attack_probability(exposure, model.node_feasibility(node_id))
            return attack * (1.0 - portfolio.get(node_id))
        if node.kind is NodeKind.ASSET:
            return risk_adjusted_failure(node_id, model, portfolio)
        return 1.0
    if dimension == "impact":
        if node.kind is NodeKind.VULNERABILITY:
            if node.attrs.cvss_vector is None:
                raise NoScoringSource(
                    f"impact scoring for {node_id!r} needs a cvss_vector for its C/I/A metrics")
            return vuln_impact(node.attrs.cvss_vector)
        return structural_impact(node_id, model)
    raise InferenceError(f"unknown dimension {dimension!r}")


def or_gate_table(parent_count: int, p: float) -> np.ndarray:
    """CPT table for an OR gate with activation probability ``p``.

    Shape (2,)*(parents+1), child axis last. A root table is the bare prior.
    """
    if parent_count == 0:
        return np.array([1.0 - p, p])
    any_on = np.indices((2,) * parent_count).any(axis=0)
    p1 = np.where(any_on, p, 0.0)
    return np.stack([1.0 - p1, p1], axis=-1)


def build_cpts(
    model: BnModel,
    portfolio: Portfolio,
    dimension: str,
    snapshot: EpssSnapshot | None = None,
    config: CalibrationConfig | None = None,
    mode: str = "epss-direct",
) -> list[Factor]:
    """One OR-gate CPT factor per node for the requested dimension."""
    if dimension not in DIMENSIONS:
        raise InferenceError(f"unknown dimension {dimension!r}")
    if set(portfolio.ids()) != set(model.vulnerability_ids()):
        raise ModelError("portfolio does not cover exactly the model's vulnerability nodes")
    factors = []
    for nid in model.nodes:
        p = activation_value(nid, model, portfolio, dimension, snapshot, config, mode)
        parents = model.parents(nid)
        factors.append(Factor((*parents, nid), or_gate_table(len(parents), p)))
    return factors


def min_degree_order(scopes: Sequence[tuple[str, ...]], keep: set[str]) -> list[str]:
    """Elimination order by the min-degree heuristic, lexicographic tie-break."""
    neighbors: dict[str, set[str]] = defaultdict(set)
    for scope in scopes:
        for v in scope:
            neighbors[v].update(scope)
    for v in neighbors:
        neighbors[v].discard(v)
    to_eliminate = set(neighbors) - keep
    order = []
    while to_eliminate:
        var = min(to_eliminate, key=lambda v: (len(neighbors[v]), v))
        # eliminating var connects its remaining neighbors (fill-in)
        remaining = neighbors[var]
        for u in remaining:
            neighbors[u].discard(var)
            neighbors[u].update(w for w in remaining if w != u)
        order.append(var)
        to_eliminate.discard(var)
        del neighbors[var]
    return order


def variable_elimination(
    factors: Sequence[Factor],
    query: str,
    evidence: Mapping[str, int] | None = None,
    order: Sequence[str] | None = None,
    dimension: str = "exposure",
) -> QueryResult:
    """Exact posterior marginal of ``query`` given binary evidence."""
    evidence = dict(evidence or {})
    all_vars = {v for f in factors for v in f.scope}
    if query not in all_vars:
        raise UnknownNodeError(query)
    for var in evidence:
        if var not in all_vars:
            raise UnknownNodeError(var)

    if query in evidence:
        # The query is observed: its posterior is the one-hot on the observed
        # state, provided the full evidence set is actually attainable.
        total = _evidence_probability(factors, evidence)
        if total <= 0.0:
            raise InconsistentEvidenceError(f"evidence {evidence} has zero probability")
        state = evidence[query]
        return QueryResult(query, dimension, (1.0, 0.0) if state == 0 else (0.0, 1.0))

    reduced = _apply_evidence(factors, evidence)
    if order is None:
        order = min_degree_order([f.scope for f in reduced], keep={query})
    else:
        order = [v for v in order if v != query and v in {u for f in reduced for u in f.scope}]

    result = _eliminate(reduced, order)
    marginal = np.ones(2)
    found = False
    for f in result:
        if f.scope == (query,):
            marginal = marginal * f.table
            found = True
        elif f.scope == ():
            marginal = marginal * float(f.table)
        else:
            raise InferenceError(f"unexpected residual factor over {f.scope}")
    if not found:
        raise InferenceError(f"elimination did not reduce to the query variable {query!r}")
    total = float(marginal.sum())
    if total <= 0.0 or not np.isfinite(total):
        raise InconsistentEvidenceError(f"evidence {evidence} has zero probability")
    marginal = marginal / total
    return QueryResult(query, dimension, (float(marginal[0]), float(marginal[1])))


def _apply_evidence(factors: Sequence[Factor], evidence: Mapping[str, int]) -> list[Factor]:
    reduced = []
    for f in factors:
        for var, state in evidence.items():
            if var in f.scope:
                f = f.reduce(var, int(state))
        if f.batch_ndim:
            reduced.append(f)
            continue
        total = float(f.table.sum())
        if total == 0.0:
            raise InconsistentEvidenceError("evidence zeroes out a factor entirely")
        if f.scope:
            # keep magnitudes near 1; the final marginal is renormalized anyway
            reduced.append(Factor(f.scope, f.table / total))
        # nonzero constants rescale the joint and drop out after normalization
    return reduced


def _eliminate(factors: list[Factor], order: Sequence[str]) -> list[Factor]:
    factors = list(factors)
    for var in order:
        touching = [f for f in factors if var in f.scope]
        if not touching:
            continue
        product = touching[0]
        for f in touching[1:]:
            product = product.multiply(f)
        marginal = product.marginalize(var)
        factors = [f for f in factors if var not in f.scope]
        factors.append(marginal)
    return factors


def _evidence_probability(factors: Sequence[Factor], evidence: Mapping[str, int]) -> float:
    """Unnormalized probability of a full evidence assignment (scalar factors)."""
    remaining: list[Factor] = []
    for f in factors:
        for var, state in evidence.items():
            if var in f.scope:
                f = f.reduce(var, int(state))
        remaining.append(f)
    scopes = [f.scope for f in remaining if f.scope]
    order = min_degree_order(scopes, keep=set())
    result = _eliminate([f for f in remaining if f.scope], order)
    total = 1.0
    for f in result:
        total *= float(f.table.sum())
    for f in remaining:
        if not f.scope:
            total *= float(f.table)
    return total


def query_posterior(
    model: BnModel,
    portfolio: Portfolio,
    evidence: EvidenceSet | None = None,
    dimension: str = "exposure",
    node: str | None = None,
    snapshot: EpssSnapshot | None = None,
    config: CalibrationConfig | None = None,
    mode: str = "epss-direct",
) -> QueryResult:
    """Posterior marginal of one node (the goal by default) in one dimension."""
    evidence = dict(evidence or {})
    validate_evidence(model, evidence)
    node = node or model.goal_id()
    factors = build_cpts(model, portfolio, dimension, snapshot, config, mode)
    return variable_elimination(factors, node, evidence, dimension=dimension)


def posterior_risk(
    model: BnModel,
    portfolio: Portfolio,
    evidence: EvidenceSet | None = None,
    snapshot: EpssSnapshot | None = None,
    config: CalibrationConfig | None = None,
    mode: str = "epss-direct",
    success_state: int = 1,
) -> RiskSummary:
    """Goal-node attack likelihood and severe-impact probability under evidence.

    ``success_state`` names which binary state carries the "event occurs"
    reading when extracting P(E) and P(I) from the marginals (state 1 by
    default, matching the OR-gate encoding).
    """
    if success_state not in (0, 1):
        raise InferenceError(f"success_state must be 0 or 1, got {success_state!r}")
    goal = model.goal_id()
    exposure = query_posterior(model, portfolio, evidence, "exposure", goal, snapshot, config, mode)
    impact = query_posterior(model, portfolio, evidence, "impact", goal, snapshot, config, mode)
    return RiskSummary.from_components(
        exposure.marginal[success_state], impact.marginal[success_state])
