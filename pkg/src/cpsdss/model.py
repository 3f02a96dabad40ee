"""Typed Bayesian-network model of a cyber-physical system.

A model document (JSON) declares asset, vulnerability and hazard nodes, the
directed dependency edges between them, a global attack-feasibility factor and
the evaluation date. Models are immutable values: attribute updates return a
new, revalidated model.
"""

from __future__ import annotations

import heapq
import json
import warnings
from dataclasses import dataclass, field, fields, replace
from datetime import date
from enum import Enum
from typing import Any, Mapping

from .scoring import CvssVector, EpssSnapshot, parse_cvss_vector

EvidenceSet = dict[str, int]

IMPACT_CATEGORIES = ("S", "F", "I", "O", "C")


class ModelError(Exception):
    """Base class for model failures."""


class ModelDocumentError(ModelError):
    """Malformed or schema-violating model document."""

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class CycleError(ModelError):
    """The dependency graph contains a directed cycle."""


class UnknownNodeError(ModelError, KeyError):
    def __init__(self, node_id: str):
        super().__init__(f"unknown node {node_id!r}")
        self.node_id = node_id


class ValidationError(ModelError):
    """A model or patched model violates one or more invariants."""

    def __init__(self, diagnostics: list["Diagnostic"]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Diagnostic:
    """A single named invariant violation, tied to a node or edge."""

    invariant: str
    message: str
    node: str | None = None
    edge: tuple[str, str] | None = None

    def __str__(self) -> str:
        where = f" [{self.node}]" if self.node else (f" [{self.edge[0]}->{self.edge[1]}]" if self.edge else "")
        return f"{self.invariant}{where}: {self.message}"


class NodeKind(str, Enum):
    ASSET = "asset"
    VULNERABILITY = "vulnerability"
    HAZARD = "hazard"


@dataclass(frozen=True)
class ImpactFactors:
    """Weight/criticality pairs over the five impact categories S, F, I, O, C
    (safety, financial, informational, operational, staging)."""

    factors: tuple[float, float, float, float, float]
    criticalities: tuple[float, float, float, float, float]

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ImpactFactors":
        factors = []
        crits = []
        for cat in IMPACT_CATEGORIES:
            if cat not in data:
                raise ModelDocumentError(f"impact_factors missing category {cat!r}")
            pair = data[cat]
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ModelDocumentError(
                    f"impact_factors[{cat!r}] must be a [factor, criticality] pair"
                )
            factors.append(float(pair[0]))
            crits.append(float(pair[1]))
        extra = set(data) - set(IMPACT_CATEGORIES)
        if extra:
            raise ModelDocumentError(f"impact_factors has unknown categories {sorted(extra)}")
        return cls(tuple(factors), tuple(crits))

    def to_mapping(self) -> dict[str, list[float]]:
        return {
            cat: [self.factors[i], self.criticalities[i]]
            for i, cat in enumerate(IMPACT_CATEGORIES)
        }


@dataclass(frozen=True)
class VulnAttrs:
    cve_id: str | None = None
    cvss_vector: CvssVector | None = None
    epss_override: float | None = None
    mitigation_prob: float = 0.0
    mitigation_failure_prob: float = 0.0
    attack_feasibility: float | None = None  # per-node override of the model-level factor


@dataclass(frozen=True)
class AssetAttrs:
    failure_rate: float  # per day
    in_service_date: date
    kappa: float  # scale on mitigation-induced failure, in (0, 1]
    impact_factors: ImpactFactors


@dataclass(frozen=True)
class HazardAttrs:
    impact_factors: ImpactFactors
    is_goal: bool = False


NodeAttrs = VulnAttrs | AssetAttrs | HazardAttrs

_ATTR_TYPES: dict[NodeKind, type] = {
    NodeKind.VULNERABILITY: VulnAttrs,
    NodeKind.ASSET: AssetAttrs,
    NodeKind.HAZARD: HazardAttrs,
}


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    attrs: NodeAttrs
    label: str = ""


@dataclass(frozen=True)
class BnModel:
    """Immutable CPS dependency model: typed nodes, directed acyclic edges."""

    nodes: dict[str, Node]
    edges: tuple[tuple[str, str], ...]
    attack_feasibility: float = 1.0
    evaluation_date: date = field(default_factory=date.today)
    _parents: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)
    _children: dict[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        parents: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        children: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for parent, child in self.edges:
            if parent in children and child in parents:
                children[parent].append(child)
                parents[child].append(parent)
        object.__setattr__(self, "_parents", {k: tuple(v) for k, v in parents.items()})
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def parents(self, node_id: str) -> tuple[str, ...]:
        if node_id not in self.nodes:
            raise UnknownNodeError(node_id)
        return self._parents[node_id]

    def children(self, node_id: str) -> tuple[str, ...]:
        if node_id not in self.nodes:
            raise UnknownNodeError(node_id)
        return self._children[node_id]

    def by_kind(self, kind: NodeKind) -> list[str]:
        """Node ids of one kind, in document declaration order."""
        return [nid for nid, n in self.nodes.items() if n.kind == kind]

    def vulnerability_ids(self) -> list[str]:
        return self.by_kind(NodeKind.VULNERABILITY)

    def asset_ids(self) -> list[str]:
        return self.by_kind(NodeKind.ASSET)

    def hazard_ids(self) -> list[str]:
        return self.by_kind(NodeKind.HAZARD)

    def goal_id(self) -> str:
        goals = [nid for nid, n in self.nodes.items()
                 if n.kind == NodeKind.HAZARD and n.attrs.is_goal]
        if len(goals) != 1:
            raise ValidationError([Diagnostic(
                "goal-uniqueness", f"model has {len(goals)} goal nodes, expected exactly 1")])
        return goals[0]

    def node_feasibility(self, node_id: str) -> float:
        """Effective attack-feasibility factor for a vulnerability node."""
        attrs = self.node(node_id).attrs
        if isinstance(attrs, VulnAttrs) and attrs.attack_feasibility is not None:
            return attrs.attack_feasibility
        return self.attack_feasibility


# --- document parsing -------------------------------------------------------

def _parse_date(value: Any, context: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        raise ModelDocumentError(f"{context}: invalid ISO-8601 date {value!r}") from None


def _parse_prob(value: Any, context: str) -> float:
    try:
        prob = float(value)
    except (TypeError, ValueError):
        raise ModelDocumentError(f"{context}: expected a number, got {value!r}") from None
    if not 0.0 <= prob <= 1.0:
        raise ModelDocumentError(f"{context}: probability {prob} outside [0, 1]")
    return prob


def _parse_vuln_attrs(raw: Mapping[str, Any], nid: str) -> VulnAttrs:
    known = {"cve_id", "cvss_vector", "epss_override", "mitigation_prob",
             "mitigation_failure_prob", "attack_feasibility"}
    _reject_unknown(raw, known, nid)
    vector = raw.get("cvss_vector")
    return VulnAttrs(
        cve_id=raw.get("cve_id"),
        cvss_vector=parse_cvss_vector(vector) if vector is not None else None,
        epss_override=(
            _parse_prob(raw["epss_override"], f"node {nid} epss_override")
            if raw.get("epss_override") is not None else None
        ),
        mitigation_prob=_parse_prob(raw.get("mitigation_prob", 0.0), f"node {nid} mitigation_prob"),
        mitigation_failure_prob=_parse_prob(
            raw.get("mitigation_failure_prob", 0.0), f"node {nid} mitigation_failure_prob"),
        attack_feasibility=(
            float(raw["attack_feasibility"]) if raw.get("attack_feasibility") is not None else None
        ),
    )


def _parse_asset_attrs(raw: Mapping[str, Any], nid: str) -> AssetAttrs:
    known = {"failure_rate", "in_service_date", "kappa", "impact_factors"}
    _reject_unknown(raw, known, nid)
    for key in known:
        if key not in raw:
            raise ModelDocumentError(f"node {nid}: asset attrs missing {key!r}")
    return AssetAttrs(
        failure_rate=float(raw["failure_rate"]),
        in_service_date=_parse_date(raw["in_service_date"], f"node {nid} in_service_date"),
        kappa=float(raw["kappa"]),
        impact_factors=ImpactFactors.from_mapping(raw["impact_factors"]),
    )


def _parse_hazard_attrs(raw: Mapping[str, Any], nid: str) -> HazardAttrs:
    known = {"impact_factors", "is_goal"}
    _reject_unknown(raw, known, nid)
    if "impact_factors" not in raw:
        raise ModelDocumentError(f"node {nid}: hazard attrs missing 'impact_factors'")
    return HazardAttrs(
        impact_factors=ImpactFactors.from_mapping(raw["impact_factors"]),
        is_goal=bool(raw.get("is_goal", False)),
    )


def _reject_unknown(raw: Mapping[str, Any], known: set[str], nid: str) -> None:
    extra = set(raw) - known
    if extra:
        raise ModelDocumentError(f"node {nid}: unknown attrs {sorted(extra)}")


def parse_model(document: str | Mapping[str, Any]) -> BnModel:
    """Parse and fully validate a model document (JSON text or mapping)."""
    if isinstance(document, str):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelDocumentError(f"syntax error: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    else:
        data = document
    if not isinstance(data, Mapping):
        raise ModelDocumentError("model document must be a JSON object")
    unknown = set(data) - {"nodes", "edges", "attack_feasibility", "evaluation_date"}
    if unknown:
        raise ModelDocumentError(f"unknown top-level keys {sorted(unknown)}")
    raw_nodes = data.get("nodes")
    if not isinstance(raw_nodes, list):
        raise ModelDocumentError("'nodes' must be an array")

    nodes: dict[str, Node] = {}
    for raw in raw_nodes:
        if not isinstance(raw, Mapping):
            raise ModelDocumentError("each node must be an object")
        nid = raw.get("id")
        if not isinstance(nid, str) or not nid:
            raise ModelDocumentError(f"node id must be a nonempty string, got {nid!r}")
        if nid in nodes:
            raise ModelDocumentError(f"duplicate node id {nid!r}")
        kind_raw = raw.get("kind")
        try:
            kind = NodeKind(kind_raw)
        except ValueError:
            raise ModelDocumentError(f"node {nid}: unknown kind {kind_raw!r}") from None
        attrs_raw = raw.get("attrs", {})
        if not isinstance(attrs_raw, Mapping):
            raise ModelDocumentError(f"node {nid}: attrs must be an object")
        if kind is NodeKind.VULNERABILITY:
            attrs: NodeAttrs = _parse_vuln_attrs(attrs_raw, nid)
        elif kind is NodeKind.ASSET:
            attrs = _parse_asset_attrs(attrs_raw, nid)
        else:
            attrs = _parse_hazard_attrs(attrs_raw, nid)
        nodes[nid] = Node(id=nid, kind=kind, attrs=attrs, label=str(raw.get("label", "")))

    raw_edges = data.get("edges", [])
    if not isinstance(raw_edges, list):
        raise ModelDocumentError("'edges' must be an array")
    edges: list[tuple[str, str]] = []
    seen_edges: set[tuple[str, str]] = set()
    for raw in raw_edges:
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise ModelDocumentError(f"each edge must be a [parent, child] pair, got {raw!r}")
        parent, child = str(raw[0]), str(raw[1])
        for endpoint in (parent, child):
            if endpoint not in nodes:
                raise ModelDocumentError(f"edge references unknown node {endpoint!r}")
        if (parent, child) not in seen_edges:  # set semantics
            seen_edges.add((parent, child))
            edges.append((parent, child))

    feasibility = data.get("attack_feasibility", 1.0)
    try:
        feasibility = float(feasibility)
    except (TypeError, ValueError):
        raise ModelDocumentError(f"attack_feasibility must be a number, got {feasibility!r}") from None

    eval_date = data.get("evaluation_date")
    model = BnModel(
        nodes=nodes,
        edges=tuple(edges),
        attack_feasibility=feasibility,
        evaluation_date=_parse_date(eval_date, "evaluation_date") if eval_date else date.today(),
    )
    diagnostics = validate(model)
    if diagnostics:
        raise ValidationError(diagnostics)
    topological_order(model)  # surfaces CycleError with the offending nodes
    return model


def serialize_model(model: BnModel) -> dict[str, Any]:
    """Document form of a model; parse(serialize(m)) == m."""
    nodes = []
    for node in model.nodes.values():
        attrs: dict[str, Any] = {}
        a = node.attrs
        if isinstance(a, VulnAttrs):
            if a.cve_id is not None:
                attrs["cve_id"] = a.cve_id
            if a.cvss_vector is not None:
                attrs["cvss_vector"] = str(a.cvss_vector)
            if a.epss_override is not None:
                attrs["epss_override"] = a.epss_override
            attrs["mitigation_prob"] = a.mitigation_prob
            attrs["mitigation_failure_prob"] = a.mitigation_failure_prob
            if a.attack_feasibility is not None:
                attrs["attack_feasibility"] = a.attack_feasibility
        elif isinstance(a, AssetAttrs):
            attrs = {
                "failure_rate": a.failure_rate,
                "in_service_date": a.in_service_date.isoformat(),
                "kappa": a.kappa,
                "impact_factors": a.impact_factors.to_mapping(),
            }
        else:
            attrs = {"impact_factors": a.impact_factors.to_mapping(), "is_goal": a.is_goal}
        nodes.append({"id": node.id, "kind": node.kind.value, "label": node.label, "attrs": attrs})
    return {
        "nodes": nodes,
        "edges": [list(e) for e in model.edges],
        "attack_feasibility": model.attack_feasibility,
        "evaluation_date": model.evaluation_date.isoformat(),
    }


# --- validation -------------------------------------------------------------

def validate(model: BnModel, snapshot: EpssSnapshot | None = None) -> list[Diagnostic]:
    """Check every model invariant; an empty list means the model is valid.

    When an EPSS snapshot is supplied, a bare CVE id only counts as a scoring
    source if the snapshot resolves it; without one it is taken on trust.
    """
    out: list[Diagnostic] = []

    for parent, child in model.edges:
        for endpoint in (parent, child):
            if endpoint not in model.nodes:
                out.append(Diagnostic("edge-endpoints", f"unknown node {endpoint!r}", edge=(parent, child)))

    if model.attack_feasibility < 0:
        out.append(Diagnostic("feasibility-nonnegative",
                              f"attack_feasibility {model.attack_feasibility} is negative"))
    elif model.attack_feasibility > 1:
        warnings.warn(
            f"attack_feasibility {model.attack_feasibility} exceeds 1; "
            "exposure products are clamped to [0, 1]",
            stacklevel=2,
        )

    goals = []
    for nid, node in model.nodes.items():
        if not nid:
            out.append(Diagnostic("id-nonempty", "empty node id"))
        a = node.attrs
        if node.kind is NodeKind.VULNERABILITY:
            if not isinstance(a, VulnAttrs):
                out.append(Diagnostic("attrs-kind", "vulnerability node with non-vulnerability attrs", node=nid))
                continue
            resolvable_cve = a.cve_id is not None and (snapshot is None or a.cve_id in snapshot)
            if not (resolvable_cve or a.cvss_vector is not None or a.epss_override is not None):
                out.append(Diagnostic(
                    "vuln-scoring-source",
                    "no usable scoring source (need a resolvable cve_id, a cvss_vector, or an epss_override)",
                    node=nid))
            for name in ("mitigation_prob", "mitigation_failure_prob"):
                p = getattr(a, name)
                if not 0.0 <= p <= 1.0:
                    out.append(Diagnostic("probability-range", f"{name} {p} outside [0, 1]", node=nid))
            if a.epss_override is not None and not 0.0 <= a.epss_override <= 1.0:
                out.append(Diagnostic("probability-range", f"epss_override {a.epss_override} outside [0, 1]", node=nid))
            if a.attack_feasibility is not None:
                if a.attack_feasibility < 0:
                    out.append(Diagnostic("feasibility-nonnegative",
                                          f"attack_feasibility override {a.attack_feasibility} is negative", node=nid))
                elif a.attack_feasibility > 1:
                    warnings.warn(
                        f"node {nid}: attack_feasibility override {a.attack_feasibility} exceeds 1",
                        stacklevel=2,
                    )
        elif node.kind is NodeKind.ASSET:
            if not isinstance(a, AssetAttrs):
                out.append(Diagnostic("attrs-kind", "asset node with non-asset attrs", node=nid))
                continue
            if a.failure_rate < 0:
                out.append(Diagnostic("failure-rate-nonnegative", f"failure_rate {a.failure_rate} is negative", node=nid))
            if not 0.0 < a.kappa <= 1.0:
                out.append(Diagnostic("kappa-bound", f"kappa {a.kappa} outside (0, 1]", node=nid))
            if a.in_service_date > model.evaluation_date:
                out.append(Diagnostic(
                    "service-date-order",
                    f"in_service_date {a.in_service_date} is after evaluation_date {model.evaluation_date}",
                    node=nid))
            out.extend(_check_impact_factors(a.impact_factors, nid))
        else:
            if not isinstance(a, HazardAttrs):
                out.append(Diagnostic("attrs-kind", "hazard node with non-hazard attrs", node=nid))
                continue
            if a.is_goal:
                goals.append(nid)
            out.extend(_check_impact_factors(a.impact_factors, nid))

    if len(goals) != 1:
        out.append(Diagnostic(
            "goal-uniqueness",
            f"model declares {len(goals)} goal nodes ({', '.join(goals) or 'none'}), expected exactly 1"))
    for goal in goals:
        if goal in model.nodes and model.children(goal):
            out.append(Diagnostic(
                "goal-no-children",
                f"goal node has children {list(model.children(goal))}", node=goal))

    try:
        topological_order(model)
    except CycleError as exc:
        out.append(Diagnostic("acyclicity", str(exc)))

    return out


def _check_impact_factors(f: ImpactFactors, nid: str) -> list[Diagnostic]:
    out = []
    for value in (*f.factors, *f.criticalities):
        if not 0.0 <= value <= 1.0:
            out.append(Diagnostic("impact-factor-range", f"impact factor component {value} outside [0, 1]", node=nid))
            break
    if sum(f.factors) <= 0:
        out.append(Diagnostic("impact-factor-sum", "sum of impact factors must be positive", node=nid))
    return out


def validate_evidence(model: BnModel, evidence: Mapping[str, int]) -> None:
    """Evidence keys must name model nodes; states are binary."""
    for nid, state in evidence.items():
        if nid not in model.nodes:
            raise UnknownNodeError(nid)
        if state not in (0, 1):
            raise ModelError(f"evidence state for {nid!r} must be 0 or 1, got {state!r}")


# --- graph operations -------------------------------------------------------

def topological_order(model: BnModel) -> list[str]:
    """Parents-before-children ordering, lexicographic among ready nodes."""
    indegree = {nid: 0 for nid in model.nodes}
    for _, child in model.edges:
        if child in indegree:
            indegree[child] += 1
    ready = [nid for nid, deg in sorted(indegree.items()) if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for child in model.children(nid):
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, child)
    if len(order) != len(model.nodes):
        stuck = sorted(nid for nid, deg in indegree.items() if deg > 0)
        raise CycleError(f"cycle detected involving nodes {stuck}")
    return order


# --- updates ----------------------------------------------------------------

def update_attribute(model: BnModel, node_id: str, patch: Mapping[str, Any]) -> BnModel:
    """Return a new model with ``patch`` applied to one node's attributes.

    The patch may also set ``label``. The result is revalidated in full; the
    input model is never mutated.
    """
    node = model.node(node_id)
    attr_type = _ATTR_TYPES[node.kind]
    valid_fields = {f.name for f in fields(attr_type)}

    attr_patch: dict[str, Any] = {}
    label = node.label
    for key, value in patch.items():
        if key == "label":
            label = str(value)
            continue
        if key not in valid_fields:
            raise ModelError(
                f"attribute {key!r} is not valid for {node.kind.value} node {node_id!r}")
        if key == "cvss_vector" and value is not None and not isinstance(value, CvssVector):
            value = parse_cvss_vector(value)
        if key == "in_service_date" and not isinstance(value, date):
            value = _parse_date(value, f"node {node_id} in_service_date")
        if key == "impact_factors" and not isinstance(value, ImpactFactors):
            value = ImpactFactors.from_mapping(value)
        attr_patch[key] = value

    new_attrs = replace(node.attrs, **attr_patch)
    new_nodes = dict(model.nodes)
    new_nodes[node_id] = Node(id=node.id, kind=node.kind, attrs=new_attrs, label=label)
    updated = BnModel(
        nodes=new_nodes,
        edges=model.edges,
        attack_feasibility=model.attack_feasibility,
        evaluation_date=model.evaluation_date,
    )
    diagnostics = validate(updated)
    if diagnostics:
        raise ValidationError(diagnostics)
    return updated


def update_model_attribute(
    model: BnModel,
    attack_feasibility: float | None = None,
    evaluation_date: date | str | None = None,
) -> BnModel:
    """Return a new model with model-level attributes replaced."""
    updated = BnModel(
        nodes=dict(model.nodes),
        edges=model.edges,
        attack_feasibility=(
            float(attack_feasibility) if attack_feasibility is not None else model.attack_feasibility
        ),
        evaluation_date=(
            _parse_date(evaluation_date, "evaluation_date")
            if evaluation_date is not None else model.evaluation_date
        ),
    )
    diagnostics = validate(updated)
    if diagnostics:
        raise ValidationError(diagnostics)
    return updated
