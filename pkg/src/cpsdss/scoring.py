"""Per-node exposure scoring: CVSS exploitability, EPSS lookup, Bayesian calibration.

Vulnerability exposure comes from one of two routes: the empirical exploit
probability published for the CVE (used as-is), or an exploitability proxy
derived from the CVSS 3.1 base vector, pulled toward a neutral prior by a
precision-weighted Gaussian update. Asset exposure is exponential decay in
service time; hazard exposure is a deterministic OR over parent states.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

if TYPE_CHECKING:  # pragma: no cover - avoids a cycle with model.py
    from .model import VulnAttrs


class ScoringError(ValueError):
    """Base class for scoring failures."""


class CvssParseError(ScoringError):
    """Malformed CVSS 3.1 vector string."""


class EpssNotFound(ScoringError, KeyError):
    """CVE id missing from the EPSS snapshot."""


class NoScoringSource(ScoringError):
    """Vulnerability has neither a usable EPSS score nor a CVSS vector."""


# CVSS 3.1 numeric weights published by FIRST. PR has distinct values when the
# scope metric is C (changed).
CVSS_WEIGHTS = {
    "AV": {"N": 0.85, "A": 0.62, "L": 0.55, "P": 0.2},
    "AC": {"L": 0.77, "H": 0.44},
    "PR": {"N": 0.85, "L": 0.62, "H": 0.27},
    "PR_CHANGED": {"N": 0.85, "L": 0.68, "H": 0.5},
    "UI": {"N": 0.85, "R": 0.62},
    "CIA": {"H": 0.56, "L": 0.22, "N": 0.0},
}

_CVSS_PREFIX = "CVSS:3.1"
_METRIC_VALUES = {
    "AV": frozenset("NALP"),
    "AC": frozenset("LH"),
    "PR": frozenset("NLH"),
    "UI": frozenset("NR"),
    "S": frozenset("UC"),
    "C": frozenset("NLH"),
    "I": frozenset("NLH"),
    "A": frozenset("NLH"),
}


@dataclass(frozen=True)
class CvssVector:
    """Parsed CVSS 3.1 base vector (metrics only, no score arithmetic)."""

    av: str
    ac: str
    pr: str
    ui: str
    s: str
    c: str
    i: str
    a: str

    def __str__(self) -> str:
        return (
            f"{_CVSS_PREFIX}/AV:{self.av}/AC:{self.ac}/PR:{self.pr}/UI:{self.ui}"
            f"/S:{self.s}/C:{self.c}/I:{self.i}/A:{self.a}"
        )


def parse_cvss_vector(text: str) -> CvssVector:
    """Parse a ``CVSS:3.1/...`` base vector string.

    All eight base metrics must appear exactly once; order is free.
    """
    if not isinstance(text, str):
        raise CvssParseError(f"CVSS vector must be a string, got {type(text).__name__}")
    parts = text.strip().split("/")
    if not parts or parts[0].upper() != _CVSS_PREFIX:
        raise CvssParseError(f"CVSS vector must start with '{_CVSS_PREFIX}/': {text!r}")
    seen: dict[str, str] = {}
    for part in parts[1:]:
        if ":" not in part:
            raise CvssParseError(f"malformed metric {part!r} in {text!r}")
        name, _, value = part.partition(":")
        name, value = name.upper(), value.upper()
        if name not in _METRIC_VALUES:
            raise CvssParseError(f"unknown metric {name!r} in {text!r}")
        if name in seen:
            raise CvssParseError(f"duplicate metric {name!r} in {text!r}")
        if value not in _METRIC_VALUES[name]:
            raise CvssParseError(f"invalid value {value!r} for metric {name!r} in {text!r}")
        seen[name] = value
    missing = [m for m in _METRIC_VALUES if m not in seen]
    if missing:
        raise CvssParseError(f"missing metrics {missing} in {text!r}")
    return CvssVector(
        av=seen["AV"], ac=seen["AC"], pr=seen["PR"], ui=seen["UI"],
        s=seen["S"], c=seen["C"], i=seen["I"], a=seen["A"],
    )


def exploitability_product(v: CvssVector) -> float:
    """Exploitability proxy: product of the AV, AC, PR and UI weights.

    PR uses the scope-changed weights when S:C.
    """
    pr_table = CVSS_WEIGHTS["PR_CHANGED"] if v.s == "C" else CVSS_WEIGHTS["PR"]
    return (
        CVSS_WEIGHTS["AV"][v.av]
        * CVSS_WEIGHTS["AC"][v.ac]
        * pr_table[v.pr]
        * CVSS_WEIGHTS["UI"][v.ui]
    )


def cia_weights(v: CvssVector) -> tuple[float, float, float]:
    """Numeric (C, I, A) impact weights for a parsed vector."""
    table = CVSS_WEIGHTS["CIA"]
    return table[v.c], table[v.i], table[v.a]


@dataclass(frozen=True)
class EpssRecord:
    cve_id: str
    score: float
    percentile: float = 0.0
    snapshot_date: date | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ScoringError(f"EPSS score {self.score} outside [0, 1] for {self.cve_id}")
        if not 0.0 <= self.percentile <= 1.0:
            raise ScoringError(f"EPSS percentile {self.percentile} outside [0, 1] for {self.cve_id}")


@dataclass(frozen=True)
class EpssSnapshot:
    """Offline cache of the FIRST EPSS feed, keyed by CVE id."""

    records: Mapping[str, EpssRecord] = field(default_factory=dict)
    snapshot_date: date | None = None

    @classmethod
    def empty(cls) -> "EpssSnapshot":
        return cls(records={})

    @classmethod
    def from_records(cls, records: Iterable[EpssRecord], snapshot_date: date | None = None) -> "EpssSnapshot":
        by_id: dict[str, EpssRecord] = {}
        for rec in records:
            if rec.cve_id in by_id:
                raise ScoringError(f"duplicate CVE id {rec.cve_id} in snapshot")
            by_id[rec.cve_id] = rec
        return cls(records=by_id, snapshot_date=snapshot_date)

    @classmethod
    def from_csv(cls, path, snapshot_date: date | None = None) -> "EpssSnapshot":
        """Load a ``cve,epss,percentile`` CSV matching the FIRST feed export.

        Comment lines starting with '#' (the feed's metadata header) are skipped.
        """
        with open(path, newline="") as fh:
            rows = [r for r in fh if not r.startswith("#")]
        reader = csv.DictReader(rows)
        records = []
        for row in reader:
            records.append(
                EpssRecord(
                    cve_id=row["cve"].strip(),
                    score=float(row["epss"]),
                    percentile=float(row.get("percentile") or 0.0),
                    snapshot_date=snapshot_date,
                )
            )
        return cls.from_records(records, snapshot_date=snapshot_date)

    def merged_with(self, records: Iterable[EpssRecord]) -> "EpssSnapshot":
        """New snapshot with ``records`` layered over the existing entries."""
        by_id = dict(self.records)
        for rec in records:
            by_id[rec.cve_id] = rec
        return EpssSnapshot(records=by_id, snapshot_date=self.snapshot_date)

    def __contains__(self, cve_id: str) -> bool:
        return cve_id in self.records

    def __len__(self) -> int:
        return len(self.records)


def epss_lookup(cve: str, snapshot: EpssSnapshot) -> float:
    """Return the snapshot's exploit probability for ``cve``.

    Raises EpssNotFound when absent; callers fall back to the CVSS route.
    """
    rec = snapshot.records.get(cve)
    if rec is None:
        raise EpssNotFound(cve)
    return rec.score


DEFAULT_EPSS_API_URL = "https://api.first.org/data/v1/epss"


def fetch_epss_records(cve_ids: Sequence[str], url: str = DEFAULT_EPSS_API_URL, timeout: float = 10.0) -> list[EpssRecord]:
    """Fetch live EPSS scores from the FIRST API. Optional; never called by default."""
    import httpx

    records: list[EpssRecord] = []
    resp = httpx.get(url, params={"cve": ",".join(cve_ids)}, timeout=timeout)
    resp.raise_for_status()
    payload = resp.json()
    for item in payload.get("data", []):
        records.append(
            EpssRecord(
                cve_id=item["cve"],
                score=float(item["epss"]),
                percentile=float(item.get("percentile", 0.0)),
                snapshot_date=date.fromisoformat(item["date"]) if item.get("date") else None,
            )
        )
    return records


@dataclass(frozen=True)
class GaussianBelief:
    """A (mean, variance) summary of an uncertain probability estimate."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if self.variance <= 0:
            raise ScoringError(f"variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class CalibrationConfig:
    """Prior and observation variances for the confidence calibration.

    The CVSS variance must exceed the EPSS variance: a heuristic proxy carries
    more epistemic uncertainty than an empirically fitted score.
    """

    prior_mean: float = 0.5
    prior_variance: float = 0.0025
    cvss_variance: float = 0.04
    epss_variance: float = 0.01

    def __post_init__(self) -> None:
        for name in ("prior_variance", "cvss_variance", "epss_variance"):
            if getattr(self, name) <= 0:
                raise ScoringError(f"{name} must be positive")
        if self.cvss_variance <= self.epss_variance:
            raise ScoringError(
                f"cvss_variance ({self.cvss_variance}) must exceed epss_variance ({self.epss_variance})"
            )

    @property
    def prior(self) -> GaussianBelief:
        return GaussianBelief(self.prior_mean, self.prior_variance)


def calibrate(prior: GaussianBelief, observations: Sequence[tuple[float, float]]) -> GaussianBelief:
    """Precision-weighted Gaussian posterior of a latent probability.

    Each observation is a (value, variance) pair treated as a noisy reading of
    the same latent quantity:

        mean_post = (m0/v0 + sum(x_i/v_i)) / (1/v0 + sum(1/v_i))
        var_post  = 1 / (1/v0 + sum(1/v_i))

    An empty observation list returns the prior unchanged.
    """
    if not observations:
        return prior
    precision = 1.0 / prior.variance
    weighted = prior.mean / prior.variance
    for value, variance in observations:
        if variance <= 0:
            raise ScoringError(f"observation variance must be positive, got {variance}")
        precision += 1.0 / variance
        weighted += value / variance
    return GaussianBelief(mean=weighted / precision, variance=1.0 / precision)


def vuln_exposure(
    attrs: "VulnAttrs",
    config: CalibrationConfig | None = None,
    snapshot: EpssSnapshot | None = None,
    mode: str = "epss-direct",
) -> tuple[float, GaussianBelief | None]:
    """Exposure probability for a vulnerability node.

    ``epss-direct`` (default): a resolvable EPSS score is used verbatim and no
    belief is produced; without one the CVSS proxy is calibrated against the
    prior. ``hybrid``: every available score enters the posterior as an
    observation. The returned mean is clamped to [0, 1].
    """
    if mode not in ("epss-direct", "hybrid"):
        raise ScoringError(f"unknown exposure mode {mode!r}")
    config = config or CalibrationConfig()
    snapshot = snapshot or EpssSnapshot.empty()

    epss_score: float | None = attrs.epss_override
    if epss_score is None and attrs.cve_id is not None:
        try:
            epss_score = epss_lookup(attrs.cve_id, snapshot)
        except EpssNotFound:
            epss_score = None

    cvss_score = exploitability_product(attrs.cvss_vector) if attrs.cvss_vector is not None else None

    if epss_score is None and cvss_score is None:
        raise NoScoringSource(
            f"no usable scoring source: cve_id={attrs.cve_id!r} unresolved and no CVSS vector"
        )

    if mode == "epss-direct" and epss_score is not None:
        return epss_score, None

    observations: list[tuple[float, float]] = []
    if mode == "hybrid" and epss_score is not None:
        observations.append((epss_score, config.epss_variance))
    if cvss_score is not None:
        observations.append((cvss_score, config.cvss_variance))
    belief = calibrate(config.prior, observations)
    mean = belief.mean
    if not 0.0 <= mean <= 1.0:
        warnings.warn(
            f"calibrated exposure mean {mean:.4f} outside [0, 1]; clamping",
            stacklevel=2,
        )
        mean = min(1.0, max(0.0, mean))
    return mean, belief


def attack_probability(exposure: float, feasibility: float) -> float:
    """Exposure scaled by the attack-feasibility factor, clamped to 1."""
    if exposure < 0 or exposure > 1:
        raise ScoringError(f"exposure {exposure} outside [0, 1]")
    if feasibility < 0:
        raise ScoringError(f"feasibility must be nonnegative, got {feasibility}")
    return min(1.0, exposure * feasibility)


def asset_failure_probability(rate: float, duration: float) -> float:
    """Failure probability of an asset after ``duration`` days at rate per day."""
    if rate < 0:
        raise ScoringError(f"failure rate must be nonnegative, got {rate}")
    if duration < 0:
        raise ScoringError(f"duration must be nonnegative, got {duration}")
    return 1.0 - math.exp(-rate * duration)


def hazard_exposure(parent_states: Sequence[int]) -> int:
    """Binary hazard gate: active exactly when any parent is active."""
    if len(parent_states) == 0:
        raise ScoringError("hazard nodes must have at least one parent")
    return 1 if any(s == 1 for s in parent_states) else 0
