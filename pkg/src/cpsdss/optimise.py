"""Pareto search over countermeasure portfolios and run diagnostics.

Portfolios are sampled per trial from an RNG stream keyed by (run seed,
trial id), so a run is reproducible, parallelizable, and a prefix of any
longer run with the same seed. Each trial scores three objectives: goal
attack likelihood (minimize), goal severe-impact probability (minimize) and
system availability (maximize). Whole batches of portfolios are pushed
through variable elimination at once by giving every factor table a leading
batch axis.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .impact import Portfolio, impact_rating
from .inference import (
    Factor,
    _apply_evidence,
    _eliminate,
    min_degree_order,
    query_posterior,
)
from .model import AssetAttrs, BnModel, EvidenceSet, ModelError, NodeKind, validate_evidence
from .scoring import CalibrationConfig, EpssSnapshot, attack_probability, vuln_exposure

SAMPLERS = ("uniform", "adaptive")


class OptimisationError(ModelError):
    pass


class TrialEvaluationError(OptimisationError):
    """Objective evaluation failed; carries the offending trial id."""

    def __init__(self, trial_id: int, reason: str):
        super().__init__(f"trial {trial_id}: {reason}")
        self.trial_id = trial_id


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    portfolio: Portfolio
    objectives: tuple[float, float, float]  # (attack likelihood, severe impact, availability)


@dataclass(frozen=True)
class ParetoFront:
    trials: tuple[TrialRecord, ...]
    run_seed: int
    trial_count: int

    def objective_array(self) -> np.ndarray:
        return np.array([t.objectives for t in self.trials], dtype=float)

    def __len__(self) -> int:
        return len(self.trials)


@dataclass(frozen=True)
class RankReport:
    average_ranks: dict[str, float]
    run_count: int
    trials_per_run: int = 0


@dataclass(frozen=True)
class StabilityMetrics:
    average_density: float
    min_density: float
    max_density: float
    density_variance: float
    density_entropy: float


@dataclass(frozen=True)
class OptimisationConfig:
    trial_count: int
    seed: int = 0
    sampler: str = "uniform"
    evidence: EvidenceSet = field(default_factory=dict)
    workers: int = 1
    batch_size: int = 256

    def __post_init__(self) -> None:
        if self.trial_count < 1:
            raise OptimisationError("trial_count must be at least 1")
        if self.sampler not in SAMPLERS:
            raise OptimisationError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.workers < 1 or self.batch_size < 1:
            raise OptimisationError("workers and batch_size must be positive")


# --- batched objective evaluation -------------------------------------------

class _RunEvaluator:
    """Evaluates many portfolios at once against one model + evidence set."""

    def __init__(
        self,
        model: BnModel,
        evidence: EvidenceSet,
        snapshot: EpssSnapshot | None,
        config: CalibrationConfig | None,
        mode: str,
        success_state: int,
    ):
        validate_evidence(model, evidence)
        self.model = model
        self.evidence = dict(evidence)
        self.success_state = success_state
        self.vuln_ids = model.vulnerability_ids()
        self.goal = model.goal_id()
        index = {vid: i for i, vid in enumerate(self.vuln_ids)}

        self.attack = np.array([
            attack_probability(
                vuln_exposure(model.node(vid).attrs, config, snapshot, mode)[0],
                model.node_feasibility(vid))
            for vid in self.vuln_ids])

        # asset failure model: decay + kappa-scaled mitigation-induced risk
        self.asset_ids = model.asset_ids()
        self.decay = np.empty(len(self.asset_ids))
        self.kappa = np.empty(len(self.asset_ids))
        self.ratings = np.empty(len(self.asset_ids))
        self.fail_matrix = np.zeros((len(self.asset_ids), len(self.vuln_ids)))
        for ai, aid in enumerate(self.asset_ids):
            attrs = model.node(aid).attrs
            assert isinstance(attrs, AssetAttrs)
            duration = (model.evaluation_date - attrs.in_service_date).days
            self.decay[ai] = 1.0 - math.exp(-attrs.failure_rate * duration)
            self.kappa[ai] = attrs.kappa
            self.ratings[ai] = impact_rating(attrs.impact_factors)
            for other in (*model.parents(aid), *model.children(aid)):
                node = model.node(other)
                if node.kind is NodeKind.VULNERABILITY:
                    self.fail_matrix[ai, index[other]] = node.attrs.mitigation_failure_prob

        # the impact network does not depend on the portfolio
        self.impact_p = query_posterior(
            model, Portfolio.uniform(model, 0.0), evidence, "impact", self.goal,
            snapshot, config, mode).marginal[success_state]

        self.vuln_index = index
        self.node_parents = {nid: model.parents(nid) for nid in model.nodes}

    def asset_failures(self, values: np.ndarray) -> np.ndarray:
        """(B, n_assets) failure probabilities for portfolios ``values`` (B, n_vulns)."""
        induced = np.minimum(1.0, values @ self.fail_matrix.T * self.kappa)
        return self.decay + (1.0 - self.decay) * induced

    def availability(self, values: np.ndarray) -> np.ndarray:
        failures = self.asset_failures(values)
        total = float(self.ratings.sum())
        if total == 0.0:
            return np.ones(values.shape[0])
        return 1.0 - failures @ self.ratings / total

    def exposure_posterior(self, values: np.ndarray, first_trial_id: int) -> np.ndarray:
        """Goal exposure posterior per portfolio row, via batched elimination."""
        batch = values.shape[0]
        failures = self.asset_failures(values)
        factors: list[Factor] = []
        for nid in self.model.nodes:
            node = self.model.node(nid)
            parents = self.node_parents[nid]
            if node.kind is NodeKind.VULNERABILITY:
                i = self.vuln_index[nid]
                p = self.attack[i] * (1.0 - values[:, i])
            elif node.kind is NodeKind.ASSET:
                p = failures[:, self.asset_ids.index(nid)]
            else:
                p = np.ones(batch)
            factors.append(Factor((*parents, nid), _batched_or_gate(len(parents), p)))

        reduced = _apply_evidence(factors, self.evidence)
        if self.goal in self.evidence:
            # the goal is observed: one-hot posterior wherever the evidence is attainable
            order = min_degree_order([f.scope for f in reduced], keep=set())
            total = _combine_batch(_eliminate(list(reduced), order), (), batch)
            self._raise_on_zero(total, first_trial_id)
            return np.full(batch, float(self.evidence[self.goal] == self.success_state))

        order = min_degree_order([f.scope for f in reduced], keep={self.goal})
        result = _eliminate(list(reduced), order)
        marginal = _combine_batch(result, (self.goal,), batch)
        total = marginal.sum(axis=-1)
        self._raise_on_zero(total, first_trial_id)
        return marginal[:, self.success_state] / total

    @staticmethod
    def _raise_on_zero(total: np.ndarray, first_trial_id: int) -> None:
        bad = np.flatnonzero(~(total > 0.0) | ~np.isfinite(total))
        if bad.size:
            raise TrialEvaluationError(
                first_trial_id + int(bad[0]),
                "evidence has zero probability under this portfolio")

    def objectives(self, values: np.ndarray, first_trial_id: int) -> np.ndarray:
        likelihood = self.exposure_posterior(values, first_trial_id)
        avail = self.availability(values)
        impact = np.full(values.shape[0], self.impact_p)
        return np.stack([likelihood, impact, avail], axis=1)


def _batched_or_gate(parent_count: int, p: np.ndarray) -> np.ndarray:
    """(B,)-batched OR-gate CPT; table shape (B, 2, ..., 2)."""
    if parent_count == 0:
        return np.stack([1.0 - p, p], axis=-1)
    any_on = np.indices((2,) * parent_count).any(axis=0)
    p = p.reshape((-1,) + (1,) * parent_count)
    p1 = np.where(any_on, p, 0.0)
    return np.stack([1.0 - p1, p1], axis=-1)


def _combine_batch(factors: Sequence[Factor], scope: tuple[str, ...], batch: int) -> np.ndarray:
    """Product of residual batched factors, expected over ``scope`` (or empty)."""
    shape = (batch,) + (2,) * len(scope)
    out = np.ones(shape)
    for f in factors:
        if f.scope == scope:
            out = out * f.table
        elif f.scope == ():
            out = out * np.asarray(f.table).reshape((-1,) + (1,) * len(scope))
        else:
            raise OptimisationError(f"unexpected residual factor over {f.scope}")
    return out


# --- sampling ----------------------------------------------------------------

def _trial_rng(seed: int, trial_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, trial_id)))


def sample_portfolio_values(seed: int, trial_id: int, n: int) -> np.ndarray:
    """Uniform portfolio draw for one trial; depends only on (seed, trial_id)."""
    return _trial_rng(seed, trial_id).random(n)


_ADAPTIVE_EXPLORE = 0.15
_ADAPTIVE_JITTER = 0.02


def _adaptive_values(
    seed: int, trial_id: int, n: int, archive: np.ndarray | None,
) -> np.ndarray:
    """Uniform crossover of two archive members plus a small Gaussian jitter.

    Recombining nondominated parents fills gaps along the trade-off surface;
    a slice of plain uniform exploration keeps the search from collapsing.
    """
    rng = _trial_rng(seed, trial_id)
    base = rng.random(n)
    if archive is None or len(archive) == 0 or rng.random() < _ADAPTIVE_EXPLORE:
        return base
    a = archive[rng.integers(len(archive))]
    b = archive[rng.integers(len(archive))]
    child = np.where(rng.random(n) < 0.5, a, b)
    return np.clip(child + rng.normal(0.0, _ADAPTIVE_JITTER, n), 0.0, 1.0)


# --- the run -----------------------------------------------------------------

def run_optimisation(
    model: BnModel,
    config: OptimisationConfig,
    snapshot: EpssSnapshot | None = None,
    calibration: CalibrationConfig | None = None,
    mode: str = "epss-direct",
    success_state: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> tuple[list[TrialRecord], ParetoFront]:
    """Sample, evaluate and Pareto-filter ``config.trial_count`` portfolios."""
    evaluator = _RunEvaluator(model, config.evidence, snapshot, calibration, mode, success_state)
    n = len(evaluator.vuln_ids)
    total = config.trial_count
    batches = [(start, min(start + config.batch_size, total))
               for start in range(0, total, config.batch_size)]

    objectives = np.empty((total, 3))
    values = np.empty((total, n))

    if config.sampler == "uniform":
        for start, stop in batches:
            for t in range(start, stop):
                values[t] = sample_portfolio_values(config.seed, t, n)

        completed = 0
        completed_lock = threading.Lock()

        def run_batch(span: tuple[int, int]) -> None:
            nonlocal completed
            start, stop = span
            objectives[start:stop] = evaluator.objectives(values[start:stop], start)
            if progress is not None:
                with completed_lock:
                    completed += stop - start
                    progress(completed, total)

        if config.workers > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                list(pool.map(run_batch, batches))
        else:
            for span in batches:
                run_batch(span)
    else:
        # archive-guided resampling adapts between batches, so batches run in order
        done = 0
        for start, stop in batches:
            archive = _nondominated_rows(objectives[:done], values[:done]) if done else None
            for t in range(start, stop):
                values[t] = _adaptive_values(config.seed, t, n, archive)
            objectives[start:stop] = evaluator.objectives(values[start:stop], start)
            done = stop
            if progress is not None:
                progress(done, total)

    trials = [
        TrialRecord(
            trial_id=t,
            portfolio=Portfolio(tuple(zip(evaluator.vuln_ids, values[t].tolist()))),
            objectives=(float(objectives[t, 0]), float(objectives[t, 1]), float(objectives[t, 2])),
        )
        for t in range(total)
    ]
    front = pareto_filter(trials, run_seed=config.seed)
    return trials, front


def _nondominated_rows(objectives: np.ndarray, values: np.ndarray) -> np.ndarray:
    mask = _nondominated_mask(objectives)
    return values[mask]


# --- Pareto filtering ---------------------------------------------------------

def _nondominated_mask(obj: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Boolean mask of rows not dominated under (min, min, max)."""
    n = obj.shape[0]
    lik, imp, av = obj[:, 0], obj[:, 1], obj[:, 2]
    mask = np.ones(n, dtype=bool)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        better_eq = (
            (lik[:, None] <= lik[None, start:stop])
            & (imp[:, None] <= imp[None, start:stop])
            & (av[:, None] >= av[None, start:stop])
        )
        strict = (
            (lik[:, None] < lik[None, start:stop])
            | (imp[:, None] < imp[None, start:stop])
            | (av[:, None] > av[None, start:stop])
        )
        mask[start:stop] = ~(better_eq & strict).any(axis=0)
    return mask


def pareto_filter(trials: Sequence[TrialRecord], run_seed: int = 0) -> ParetoFront:
    """Exact nondominated subset; duplicates on all three objectives are kept."""
    if not trials:
        raise OptimisationError("pareto_filter needs at least one trial")
    obj = np.array([t.objectives for t in trials], dtype=float)
    mask = _nondominated_mask(obj)
    members = tuple(t for t, keep in zip(trials, mask) if keep)
    return ParetoFront(trials=members, run_seed=run_seed, trial_count=len(trials))


def select_top_portfolio(front: ParetoFront) -> TrialRecord:
    """Front member minimizing the equally-weighted sum of min-max-normalized
    objectives (availability reversed); ties fall to the lowest trial id."""
    if not front.trials:
        raise OptimisationError("empty Pareto front")
    obj = front.objective_array()
    cost = np.stack([obj[:, 0], obj[:, 1], 1.0 - obj[:, 2]], axis=1)
    lo, hi = cost.min(axis=0), cost.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scores = ((cost - lo) / span).sum(axis=1)
    best = min(range(len(front.trials)), key=lambda i: (scores[i], front.trials[i].trial_id))
    return front.trials[best]


# --- frequency-based heuristics ----------------------------------------------

def portfolio_ranks(portfolio: Portfolio) -> dict[str, int]:
    """Rank mitigation strengths 1..n (1 = strongest), ties lexicographic by id."""
    ordered = sorted(portfolio.entries, key=lambda kv: (-kv[1], kv[0]))
    return {nid: pos for pos, (nid, _) in enumerate(ordered, start=1)}


def frequency_rank(portfolios: Sequence[Portfolio], trials_per_run: int = 0) -> RankReport:
    """Average per-vulnerability rank position across top portfolios."""
    if not portfolios:
        raise OptimisationError("frequency_rank needs at least one portfolio")
    ids = portfolios[0].ids()
    totals = {nid: 0.0 for nid in ids}
    for pf in portfolios:
        if set(pf.ids()) != set(ids):
            raise OptimisationError("portfolios rank different vulnerability sets")
        for nid, pos in portfolio_ranks(pf).items():
            totals[nid] += pos
    averages = {nid: totals[nid] / len(portfolios) for nid in ids}
    return RankReport(average_ranks=averages, run_count=len(portfolios),
                      trials_per_run=trials_per_run)


def effectiveness_fraction(implemented: int, ranked_group_size: int) -> float:
    """Share of the ranked mitigation group actually implemented, as a percentage."""
    if ranked_group_size < 1:
        raise OptimisationError("ranked group size must be at least 1")
    if not 0 <= implemented <= ranked_group_size:
        raise OptimisationError(
            f"implemented count {implemented} outside [0, {ranked_group_size}]")
    return 100.0 * implemented / ranked_group_size


def run_heuristic_analysis(
    model: BnModel,
    runs: int,
    trials_per_run: int,
    seed: int = 0,
    sampler: str = "uniform",
    evidence: EvidenceSet | None = None,
    snapshot: EpssSnapshot | None = None,
    calibration: CalibrationConfig | None = None,
    mode: str = "epss-direct",
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> tuple[list[ParetoFront], list[TrialRecord], RankReport]:
    """Repeated optimisation runs (seeds seed, seed+1, ...) plus rank averaging."""
    fronts: list[ParetoFront] = []
    tops: list[TrialRecord] = []
    for r in range(runs):
        config = OptimisationConfig(
            trial_count=trials_per_run, seed=seed + r, sampler=sampler,
            evidence=dict(evidence or {}), workers=workers)
        _, front = run_optimisation(model, config, snapshot, calibration, mode)
        fronts.append(front)
        tops.append(select_top_portfolio(front))
        if progress is not None:
            progress(r + 1, runs)
    report = frequency_rank([t.portfolio for t in tops], trials_per_run=trials_per_run)
    return fronts, tops, report


# --- stability diagnostics ----------------------------------------------------

def kde_densities(points: np.ndarray, bandwidth: float | str = "scott") -> np.ndarray:
    """Gaussian product-kernel density of each sample point.

    Scott's rule sets a per-dimension bandwidth sigma_j * m^(-1/(d+4));
    dimensions with zero spread fall back to a unit bandwidth, which leaves
    relative densities untouched. An explicit bandwidth is applied uniformly.
    """
    points = np.asarray(points, dtype=float)
    m, d = points.shape
    if isinstance(bandwidth, str):
        if bandwidth != "scott":
            raise OptimisationError(f"unknown bandwidth rule {bandwidth!r}")
        sigma = points.std(axis=0, ddof=1)
        h = np.where(sigma > 0, sigma, 1.0) * m ** (-1.0 / (d + 4))
    else:
        if bandwidth <= 0:
            raise OptimisationError("bandwidth must be positive")
        h = np.full(d, float(bandwidth))
    scaled = points / h
    sq = ((scaled[:, None, :] - scaled[None, :, :]) ** 2).sum(axis=2)
    kernels = np.exp(-0.5 * sq)
    norm = m * float(np.prod(h)) * (2.0 * np.pi) ** (d / 2.0)
    return kernels.sum(axis=1) / norm


def stability_metrics(front: ParetoFront, bandwidth: float | str = "scott") -> StabilityMetrics:
    """KDE density summary of a front in objective space, plus density entropy."""
    if len(front.trials) < 2:
        raise OptimisationError("stability metrics need a front with at least 2 points")
    densities = kde_densities(front.objective_array(), bandwidth)
    weights = densities / densities.sum()
    nonzero = weights[weights > 0]
    entropy = float(-(nonzero * np.log(nonzero)).sum())
    return StabilityMetrics(
        average_density=float(densities.mean()),
        min_density=float(densities.min()),
        max_density=float(densities.max()),
        density_variance=float(densities.var()),
        density_entropy=entropy,
    )


def front_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point sets in objective space."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pair = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return float(max(pair.min(axis=1).max(), pair.min(axis=0).max()))


def front_dispersion(fronts: Sequence[ParetoFront]) -> float:
    """Mean pairwise Hausdorff distance across runs; the repeatability signal.

    Objective ranges differ by orders of magnitude (attack likelihood spans
    tenths, availability hundredths), so coordinates are min-max normalized
    over the pooled fronts first, as is usual for multi-objective indicators.
    """
    if len(fronts) < 2:
        raise OptimisationError("dispersion needs at least two fronts")
    arrays = [f.objective_array() for f in fronts]
    pooled = np.vstack(arrays)
    lo, hi = pooled.min(axis=0), pooled.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = [(a - lo) / span for a in arrays]
    distances = [
        front_hausdorff(scaled[i], scaled[j])
        for i in range(len(scaled)) for j in range(i + 1, len(scaled))
    ]
    return float(np.mean(distances))


# --- CSV export ----------------------------------------------------------------

FRONT_CSV_FIXED_COLUMNS = ("trial_id", "likelihood", "impact", "availability")


def export_front_csv(front: ParetoFront) -> str:
    """Delimited front export: objectives plus per-vulnerability mitigations."""
    if not front.trials:
        raise OptimisationError("cannot export an empty front")
    vuln_ids = front.trials[0].portfolio.ids()
    lines = [f"#run_seed={front.run_seed},trial_count={front.trial_count}"]
    lines.append(",".join((*FRONT_CSV_FIXED_COLUMNS, *vuln_ids)))
    for t in sorted(front.trials, key=lambda t: t.trial_id):
        lik, imp, av = t.objectives
        row = [str(t.trial_id), repr(lik), repr(imp), repr(av)]
        row.extend(repr(v) for v in t.portfolio.values())
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def parse_front_csv(text: str) -> ParetoFront:
    """Inverse of export_front_csv."""
    run_seed = 0
    trial_count = 0
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].startswith("#"):
        meta = dict(item.split("=", 1) for item in lines[0][1:].split(","))
        run_seed = int(meta.get("run_seed", 0))
        trial_count = int(meta.get("trial_count", 0))
        lines = lines[1:]
    if not lines:
        raise OptimisationError("front CSV has no header")
    header = lines[0].split(",")
    if tuple(header[:4]) != FRONT_CSV_FIXED_COLUMNS:
        raise OptimisationError(f"unexpected front CSV header {header[:4]}")
    vuln_ids = header[4:]
    trials = []
    for line in lines[1:]:
        cells = line.split(",")
        objectives = (float(cells[1]), float(cells[2]), float(cells[3]))
        values = tuple(zip(vuln_ids, (float(c) for c in cells[4:])))
        trials.append(TrialRecord(int(cells[0]), Portfolio(values), objectives))
    front = ParetoFront(tuple(trials), run_seed=run_seed, trial_count=trial_count)
    return front
