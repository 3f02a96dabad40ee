import pytest
from hypothesis import given, strategies as st

from cpsdss.impact import (
    ImpactError,
    Portfolio,
    RiskSummary,
    availability,
    impact_rating,
    risk_adjusted_failure,
    structural_impact,
    vuln_impact,
)
from cpsdss.model import ImpactFactors, ModelError, parse_model
from cpsdss.scoring import parse_cvss_vector

# The six solar component criticality rows and their expected ratings.
COMPONENT_RATINGS = [
    ({"S": [1, 0], "F": [0.25, 0], "I": [0.25, 0.5], "O": [0.75, 0], "C": [0.5, 0.25]}, 0.0909),
    ({"S": [1, 0], "F": [0.25, 0], "I": [0.25, 0.5], "O": [0.75, 0], "C": [0.5, 0.25]}, 0.0909),
    ({"S": [1, 0], "F": [0.25, 0], "I": [0.25, 0.5], "O": [0.75, 0.5], "C": [0.5, 0.5]}, 0.2727),
    ({"S": [1, 0], "F": [0.25, 0], "I": [0.25, 0.5], "O": [0.75, 0.5], "C": [0.5, 0.5]}, 0.2727),
    ({"S": [1, 0], "F": [0.25, 0.25], "I": [0.25, 0.75], "O": [0.75, 0.75], "C": [0.5, 0.5]}, 0.3864),
    ({"S": [1, 0.5], "F": [0.25, 0.75], "I": [0.25, 0], "O": [0.75, 1], "C": [0.5, 0.75]}, 0.6591),
]


def two_asset_doc(kappas=(0.5, 0.5), fails=(0.0, 0.0), rates=(0.0, 0.0)):
    def impact_block(criticalities):
        return {"S": [1, criticalities[0]], "F": [0.25, criticalities[1]],
                "I": [0.25, criticalities[2]], "O": [0.75, criticalities[3]],
                "C": [0.5, criticalities[4]]}

    return {
        "nodes": [
            {"id": "V1", "kind": "vulnerability",
             "attrs": {"cvss_vector": "CVSS:3.1/AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H",
                       "mitigation_failure_prob": fails[0]}},
            {"id": "V2", "kind": "vulnerability",
             "attrs": {"cvss_vector": "CVSS:3.1/AV:L/AC:H/PR:L/UI:R/S:U/C:L/I:L/A:L",
                       "mitigation_failure_prob": fails[1]}},
            {"id": "A1", "kind": "asset",
             "attrs": {"failure_rate": rates[0], "in_service_date": "2024-01-01",
                       "kappa": kappas[0], "impact_factors": impact_block([0, 0.25, 0.75, 0.75, 0.5])}},
            {"id": "A2", "kind": "asset",
             "attrs": {"failure_rate": rates[1], "in_service_date": "2024-01-01",
                       "kappa": kappas[1], "impact_factors": impact_block([0.5, 0.75, 0, 1, 0.75])}},
            {"id": "H1", "kind": "hazard",
             "attrs": {"impact_factors": impact_block([1, 1, 0, 1, 0.75]), "is_goal": True}},
        ],
        "edges": [["V1", "A1"], ["V2", "A1"], ["V2", "A2"], ["A1", "H1"], ["A2", "H1"]],
        "attack_feasibility": 1.0,
        "evaluation_date": "2025-07-01",
    }


class TestVulnImpact:
    def test_no_impact(self):
        v = parse_cvss_vector("CVSS:3.1/AV:N/AC:L/PR:N/UI:N/S:U/C:N/I:N/A:N")
        assert vuln_impact(v) == 0.0

    def test_partial_impact_by_hand(self):
        # 1 - (1-0)(1-0.22)(1-0.56) = 0.6568
        v = parse_cvss_vector("CVSS:3.1/AV:N/AC:L/PR:N/UI:N/S:C/C:N/I:L/A:H")
        assert vuln_impact(v) == pytest.approx(0.6568, abs=1e-9)

    def test_full_impact_by_hand(self):
        # 1 - 0.44^3 = 0.914816
        v = parse_cvss_vector("CVSS:3.1/AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H")
        assert vuln_impact(v) == pytest.approx(0.914816, abs=1e-9)

    def test_monotone_in_each_metric(self):
        ladder = ["N", "L", "H"]
        base = "CVSS:3.1/AV:N/AC:L/PR:N/UI:N/S:U/C:{c}/I:{i}/A:{a}"
        for metric in "cia":
            values = []
            for level in ladder:
                spec = {"c": "N", "i": "N", "a": "N"}
                spec[metric] = level
                values.append(vuln_impact(parse_cvss_vector(base.format(**spec))))
            assert values == sorted(values)


class TestStructuralImpact:
    def test_leaf_hazard_zero(self, solar_model):
        assert structural_impact("H8_Power_Outage", solar_model) == 0.0

    def test_direct_ratio(self, solar_model):
        # the grid asset influences two hazards in the 30-node model
        assert structural_impact("A5_Power_Grid", solar_model) == pytest.approx(2 / 30)

    def test_all_other_nodes_as_children(self):
        doc = two_asset_doc()
        doc["edges"] = [["A1", "V1"], ["A1", "V2"], ["A1", "A2"], ["A1", "H1"]]
        model = parse_model(doc)
        assert structural_impact("A1", model) == pytest.approx(4 / 5)

    def test_rejects_vulnerability(self, solar_model):
        with pytest.raises(ImpactError):
            structural_impact("V1", solar_model)


class TestImpactRating:
    @pytest.mark.parametrize("mapping, expected", COMPONENT_RATINGS)
    def test_component_rows(self, mapping, expected):
        assert impact_rating(ImpactFactors.from_mapping(mapping)) == \
            pytest.approx(expected, abs=1e-4)

    def test_all_criticalities_zero(self):
        mapping = {c: [0.5, 0.0] for c in "SFIOC"}
        assert impact_rating(ImpactFactors.from_mapping(mapping)) == 0.0

    def test_zero_factor_sum_rejected(self):
        factors = ImpactFactors(factors=(0, 0, 0, 0, 0), criticalities=(1, 1, 1, 1, 1))
        with pytest.raises(ImpactError):
            impact_rating(factors)


class TestRiskAdjustedFailure:
    def test_no_vulns_no_rate(self):
        doc = two_asset_doc()
        doc["edges"] = [["V1", "A1"], ["V2", "A1"], ["A1", "H1"], ["A2", "H1"]]
        model = parse_model(doc)
        portfolio = Portfolio.uniform(model, 1.0)
        assert risk_adjusted_failure("A2", model, portfolio) == 0.0

    def test_two_vulns_fully_applied(self):
        model = parse_model(two_asset_doc(kappas=(0.5, 0.5), fails=(0.4, 0.8)))
        portfolio = Portfolio.uniform(model, 1.0)
        assert risk_adjusted_failure("A1", model, portfolio) == pytest.approx(0.6)

    def test_clamped_at_one(self):
        model = parse_model(two_asset_doc(kappas=(1.0, 1.0), fails=(0.7, 0.7)))
        portfolio = Portfolio.uniform(model, 1.0)
        assert risk_adjusted_failure("A1", model, portfolio) == 1.0

    def test_decay_and_mitigation_union(self):
        import math

        model = parse_model(two_asset_doc(kappas=(0.5, 0.5), fails=(0.4, 0.0),
                                          rates=(0.001, 0.0)))
        portfolio = Portfolio.from_mapping(model, {"V1": 1.0, "V2": 0.0})
        duration = (model.evaluation_date - model.node("A1").attrs.in_service_date).days
        decay = 1 - math.exp(-0.001 * duration)
        expected = 1 - (1 - decay) * (1 - 0.2)
        assert risk_adjusted_failure("A1", model, portfolio) == pytest.approx(expected)

    @given(
        applied=st.tuples(st.floats(0, 1), st.floats(0, 1)),
        bumped=st.floats(0, 1),
    )
    def test_monotone_in_applied_values(self, applied, bumped):
        model = parse_model(two_asset_doc(kappas=(0.7, 0.5), fails=(0.4, 0.3)))
        low = dict(zip(("V1", "V2"), applied))
        high = dict(low)
        high["V1"] = max(low["V1"], bumped)
        f_low = risk_adjusted_failure("A1", model, Portfolio.from_mapping(model, low))
        f_high = risk_adjusted_failure("A1", model, Portfolio.from_mapping(model, high))
        assert f_low <= f_high + 1e-12
        assert f_high <= 1.0


class TestAvailability:
    def test_all_assets_healthy(self):
        model = parse_model(two_asset_doc())
        assert availability(model, Portfolio.uniform(model, 0.0)) == 1.0

    def test_single_asset_weighting(self):
        doc = two_asset_doc(kappas=(0.5, 0.5), fails=(0.6, 0.0))
        doc["nodes"] = [n for n in doc["nodes"] if n["id"] != "A2"]
        doc["edges"] = [["V1", "A1"], ["V2", "A1"], ["A1", "H1"]]
        model = parse_model(doc)
        portfolio = Portfolio.from_mapping(model, {"V1": 1.0, "V2": 0.0})
        # failure = min(1, 0.5*0.6) = 0.3 regardless of the asset's rating
        assert availability(model, portfolio) == pytest.approx(0.7)

    def test_two_assets_weighted_by_hand(self):
        # ratings 0.3864 and 0.6591; failures 0 and 1 under full mitigation of V2 only
        model = parse_model(two_asset_doc(kappas=(0.5, 1.0), fails=(0.0, 1.0)))
        portfolio = Portfolio.from_mapping(model, {"V1": 0.0, "V2": 1.0})
        r1, r2 = 0.3864, 0.6591
        f1 = 1 - (1 - 0.0) * (1 - min(1.0, 0.5 * 1.0))
        expected = 1 - (r1 * f1 + r2 * 1.0) / (r1 + r2)
        assert availability(model, portfolio) == pytest.approx(expected, abs=1e-4)

    def test_no_assets_rejected(self):
        doc = two_asset_doc()
        doc["nodes"] = [n for n in doc["nodes"] if not n["id"].startswith("A")]
        doc["edges"] = [["V1", "H1"]]
        model = parse_model(doc)
        with pytest.raises(ImpactError):
            availability(model, Portfolio.uniform(model, 0.0))

    @given(mit=st.floats(0, 1), bump=st.floats(0, 1))
    def test_monotone_nonincreasing_in_failures(self, mit, bump):
        model = parse_model(two_asset_doc(kappas=(0.5, 0.5), fails=(0.4, 0.3)))
        lo = Portfolio.from_mapping(model, {"V1": mit, "V2": 0.0})
        hi = Portfolio.from_mapping(model, {"V1": max(mit, bump), "V2": 0.0})
        assert availability(model, hi) <= availability(model, lo) + 1e-12


class TestRiskSummary:
    def test_published_pairs_arithmetic(self):
        first = RiskSummary.from_components(0.2555, 0.9153)
        assert first.composite_risk == pytest.approx(0.2339, abs=1e-4)
        second = RiskSummary.from_components(0.8750, 0.2393)
        assert second.composite_risk == pytest.approx(0.2094, abs=1e-4)

    def test_inconsistent_product_rejected(self):
        with pytest.raises(ModelError):
            RiskSummary(0.5, 0.5, 0.3)


class TestPortfolio:
    def test_must_cover_exactly(self, solar_model):
        with pytest.raises(ModelError):
            Portfolio.from_mapping(solar_model, {"V1": 0.5})

    def test_value_bounds(self, solar_model):
        values = {vid: 0.0 for vid in solar_model.vulnerability_ids()}
        values["V1"] = 1.5
        with pytest.raises(ModelError):
            Portfolio.from_mapping(solar_model, values)

    def test_document_order_preserved(self, solar_model):
        portfolio = Portfolio.uniform(solar_model, 0.5)
        assert list(portfolio.ids()) == solar_model.vulnerability_ids()
