"""Impact probabilities, impact ratings, and the availability objective.

Vulnerability impact comes from the CVSS C/I/A weights; asset and hazard
impact is structural (share of the graph each node directly influences).
Asset failure under a countermeasure portfolio combines time-in-service decay
with mitigation-induced failure risk, and availability is the impact-weighted
complement of those failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping

from .model import AssetAttrs, BnModel, ImpactFactors, ModelError, NodeKind, UnknownNodeError, VulnAttrs
from .scoring import CvssVector, asset_failure_probability, cia_weights


class ImpactError(ModelError):
    """Impact computation applied to the wrong node kind or inputs."""


@dataclass(frozen=True)
class Portfolio:
    """Ordered per-vulnerability mitigation probabilities (the decision variable)."""

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        for nid, value in self.entries:
            if nid in seen:
                raise ModelError(f"duplicate vulnerability {nid!r} in portfolio")
            seen.add(nid)
            if not 0.0 <= value <= 1.0:
                raise ModelError(f"mitigation probability {value} for {nid!r} outside [0, 1]")

    @classmethod
    def from_mapping(cls, model: BnModel, values: Mapping[str, float]) -> "Portfolio":
        """Portfolio over the model's vulnerabilities, in document order.

        ``values`` must cover exactly the model's vulnerability nodes.
        """
        vuln_ids = model.vulnerability_ids()
        missing = set(vuln_ids) - set(values)
        extra = set(values) - set(vuln_ids)
        if missing or extra:
            raise ModelError(
                f"portfolio must cover exactly the model's vulnerabilities; "
                f"missing={sorted(missing)} extra={sorted(extra)}")
        return cls(tuple((nid, float(values[nid])) for nid in vuln_ids))

    @classmethod
    def from_model(cls, model: BnModel) -> "Portfolio":
        """Portfolio read off the nodes' current mitigation_prob attributes."""
        return cls(tuple(
            (nid, model.node(nid).attrs.mitigation_prob) for nid in model.vulnerability_ids()))

    @classmethod
    def uniform(cls, model: BnModel, value: float) -> "Portfolio":
        return cls(tuple((nid, value) for nid in model.vulnerability_ids()))

    def get(self, nid: str) -> float:
        for key, value in self.entries:
            if key == nid:
                return value
        raise UnknownNodeError(nid)

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)

    def ids(self) -> tuple[str, ...]:
        return tuple(nid for nid, _ in self.entries)

    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.entries)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class RiskSummary:
    """Posterior attack likelihood, severe-impact probability, and their product."""

    attack_likelihood: float
    severe_impact: float
    composite_risk: float

    def __post_init__(self) -> None:
        expected = self.attack_likelihood * self.severe_impact
        if not math.isclose(self.composite_risk, expected, rel_tol=0.0, abs_tol=1e-12):
            raise ModelError(
                f"composite_risk {self.composite_risk} != P(E)*P(I) = {expected}")

    @classmethod
    def from_components(cls, attack_likelihood: float, severe_impact: float) -> "RiskSummary":
        return cls(attack_likelihood, severe_impact, attack_likelihood * severe_impact)


def vuln_impact(v: CvssVector) -> float:
    """Severe-impact probability of a vulnerability from its C/I/A weights:
    the complement of all three impact dimensions missing."""
    c, i, a = cia_weights(v)
    return 1.0 - (1.0 - c) * (1.0 - i) * (1.0 - a)


def structural_impact(node_id: str, model: BnModel) -> float:
    """Share of the graph a node directly influences: children / total nodes."""
    node = model.node(node_id)
    if node.kind is NodeKind.VULNERABILITY:
        raise ImpactError(f"structural impact is defined for assets and hazards, not {node_id!r}")
    return len(model.children(node_id)) / len(model.nodes)


def impact_rating(f: ImpactFactors) -> float:
    """Factor-weighted mean criticality across the five impact categories.

    Normalized by the factor sum so the rating stays in [0, 1] whatever the
    weights are.
    """
    total = sum(f.factors)
    if total <= 0:
        raise ImpactError("impact rating needs a positive factor sum")
    weighted = sum(factor * crit for factor, crit in zip(f.factors, f.criticalities))
    return weighted / total


def associated_vulnerabilities(model: BnModel, asset_id: str) -> list[str]:
    """Vulnerabilities directly linked to an asset by an edge in either direction."""
    node = model.node(asset_id)
    if node.kind is not NodeKind.ASSET:
        raise ImpactError(f"{asset_id!r} is not an asset node")
    linked = []
    for other in (*model.parents(asset_id), *model.children(asset_id)):
        if model.node(other).kind is NodeKind.VULNERABILITY and other not in linked:
            linked.append(other)
    return linked


def risk_adjusted_failure(asset_id: str, model: BnModel, portfolio: Portfolio) -> float:
    """Asset failure probability under a portfolio.

    Mitigation-induced risk is the kappa-scaled sum of each associated
    vulnerability's failure contribution, weighted by how strongly the
    mitigation is applied, clamped at 1. It is combined with the baseline
    time-in-service decay as independent failure sources.
    """
    attrs = model.node(asset_id).attrs
    if not isinstance(attrs, AssetAttrs):
        raise ImpactError(f"{asset_id!r} is not an asset node")
    induced = 0.0
    for vid in associated_vulnerabilities(model, asset_id):
        vattrs = model.node(vid).attrs
        assert isinstance(vattrs, VulnAttrs)
        induced += portfolio.get(vid) * vattrs.mitigation_failure_prob
    mitigation_failure = min(1.0, attrs.kappa * induced)
    duration = (model.evaluation_date - attrs.in_service_date).days
    decay = asset_failure_probability(attrs.failure_rate, duration)
    return 1.0 - (1.0 - decay) * (1.0 - mitigation_failure)


def availability(model: BnModel, portfolio: Portfolio) -> float:
    """System availability: one minus the rating-weighted mean asset failure."""
    asset_ids = model.asset_ids()
    if not asset_ids:
        raise ImpactError("availability needs at least one asset node")
    total_rating = 0.0
    weighted_failure = 0.0
    for aid in asset_ids:
        rating = impact_rating(model.node(aid).attrs.impact_factors)
        total_rating += rating
        weighted_failure += rating * risk_adjusted_failure(aid, model, portfolio)
    if total_rating == 0.0:
        return 1.0
    return 1.0 - weighted_failure / total_rating
