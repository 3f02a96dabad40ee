"""Decision support for cyber-physical incident mitigation.

Builds a typed Bayesian network from a model document, scores per-node
exposure and impact from vulnerability metadata, answers posterior risk
queries under live evidence, and searches mitigation-probability space for
Pareto-optimal countermeasure portfolios.
"""

from .impact import (
    Portfolio,
    RiskSummary,
    availability,
    impact_rating,
    risk_adjusted_failure,
    structural_impact,
    vuln_impact,
)
from .inference import (
    Factor,
    InconsistentEvidenceError,
    QueryResult,
    build_cpts,
    posterior_risk,
    query_posterior,
    variable_elimination,
)
from .model import (
    AssetAttrs,
    BnModel,
    CycleError,
    Diagnostic,
    HazardAttrs,
    ImpactFactors,
    ModelDocumentError,
    ModelError,
    Node,
    NodeKind,
    UnknownNodeError,
    ValidationError,
    VulnAttrs,
    parse_model,
    serialize_model,
    topological_order,
    update_attribute,
    validate,
)
from .optimise import (
    OptimisationConfig,
    ParetoFront,
    RankReport,
    StabilityMetrics,
    TrialRecord,
    effectiveness_fraction,
    export_front_csv,
    frequency_rank,
    front_dispersion,
    front_hausdorff,
    parse_front_csv,
    pareto_filter,
    run_heuristic_analysis,
    run_optimisation,
    select_top_portfolio,
    stability_metrics,
)
from .scoring import (
    CalibrationConfig,
    CvssParseError,
    CvssVector,
    EpssNotFound,
    EpssRecord,
    EpssSnapshot,
    GaussianBelief,
    NoScoringSource,
    asset_failure_probability,
    attack_probability,
    calibrate,
    epss_lookup,
    exploitability_product,
    hazard_exposure,
    parse_cvss_vector,
    vuln_exposure,
)

__version__ = "0.1.0"
