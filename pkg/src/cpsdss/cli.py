"""Batch command line for validation, inference, optimisation and reporting.

Exit codes: 0 success, 1 validation failure, 2 runtime error. Global options
can come from flags, environment variables (CPSDSS_EPSS_SNAPSHOT, CPSDSS_ADDR,
CPSDSS_WORKERS, CPSDSS_DATA_DIR) or a JSON config file, in that precedence.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .impact import Portfolio, availability
from .inference import posterior_risk
from .model import ModelError, ValidationError, parse_model, validate
from .optimise import (
    OptimisationConfig,
    ParetoFront,
    export_front_csv,
    front_dispersion,
    frequency_rank,
    parse_front_csv,
    run_optimisation,
    select_top_portfolio,
    stability_metrics,
)
from .scoring import EpssSnapshot

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


class CliError(click.ClickException):
    exit_code = EXIT_RUNTIME


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}")


def _setting(flag, env_name: str, config: dict, key: str, default=None):
    if flag is not None:
        return flag
    if os.environ.get(env_name):
        return os.environ[env_name]
    if key in config:
        return config[key]
    return default


def resolve_model_path(spec: str) -> Path:
    """Accept a document path with or without its .json extension."""
    path = Path(spec)
    if path.exists():
        return path
    with_ext = path.with_suffix(".json")
    if with_ext.exists():
        return with_ext
    raise CliError(f"model document not found: {spec}")


def _load_model(spec: str):
    path = resolve_model_path(spec)
    try:
        return parse_model(path.read_text())
    except ValidationError as exc:
        click.echo(f"{path}: invalid model", err=True)
        for diag in exc.diagnostics:
            click.echo(f"  {diag}", err=True)
        sys.exit(EXIT_INVALID)
    except ModelError as exc:
        click.echo(f"{path}: {exc}", err=True)
        sys.exit(EXIT_INVALID)


def _load_snapshot(epss: str | None, config: dict) -> EpssSnapshot:
    path = _setting(epss, "CPSDSS_EPSS_SNAPSHOT", config, "epss_snapshot")
    if not path:
        return EpssSnapshot.empty()
    try:
        return EpssSnapshot.from_csv(path)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load EPSS snapshot {path}: {exc}")


def _parse_evidence(pairs: tuple[str, ...]) -> dict[str, int]:
    evidence = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"evidence must look like NODE=0 or NODE=1, got {pair!r}")
        node, _, state = pair.partition("=")
        if state not in ("0", "1"):
            raise CliError(f"evidence state for {node!r} must be 0 or 1, got {state!r}")
        evidence[node] = int(state)
    return evidence


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file with defaults (epss_snapshot, addr, workers, data_dir).")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Decision support for cyber-physical incident mitigation."""
    ctx.obj = _load_config_file(config_path)


@main.command("validate")
@click.argument("model_spec")
@click.option("--epss", default=None, help="EPSS snapshot CSV used to resolve CVE ids.")
@click.pass_obj
def validate_cmd(config: dict, model_spec: str, epss: str | None) -> None:
    """Validate a model document; exit 1 with diagnostics if invalid."""
    path = resolve_model_path(model_spec)
    snapshot = _load_snapshot(epss, config)
    try:
        model = parse_model(path.read_text())
    except ValidationError as exc:
        click.echo(f"{path}: invalid")
        for diag in exc.diagnostics:
            click.echo(f"  {diag}")
        sys.exit(EXIT_INVALID)
    except ModelError as exc:
        click.echo(f"{path}: {exc}")
        sys.exit(EXIT_INVALID)
    diagnostics = validate(model, snapshot)
    if diagnostics:
        click.echo(f"{path}: invalid")
        for diag in diagnostics:
            click.echo(f"  {diag}")
        sys.exit(EXIT_INVALID)
    click.echo(
        f"{path}: ok ({len(model.nodes)} nodes, {len(model.vulnerability_ids())} vulnerabilities, "
        f"goal {model.goal_id()})")


@main.command()
@click.argument("model_spec")
@click.option("--evidence", "-e", multiple=True, help="Observed node state, NODE=0|1; repeatable.")
@click.option("--portfolio", "portfolio_path", type=click.Path(exists=True), default=None,
              help="JSON file mapping vulnerability id to mitigation probability.")
@click.option("--epss", default=None)
@click.option("--mode", type=click.Choice(["epss-direct", "hybrid"]), default="epss-direct")
@click.option("--success-state", type=click.IntRange(0, 1), default=1,
              help="Which binary state is read as the event occurring.")
@click.pass_obj
def infer(config: dict, model_spec: str, evidence: tuple[str, ...], portfolio_path: str | None,
          epss: str | None, mode: str, success_state: int) -> None:
    """Posterior attack likelihood, severe impact and composite risk at the goal."""
    model = _load_model(model_spec)
    snapshot = _load_snapshot(epss, config)
    observed = _parse_evidence(evidence)
    if portfolio_path:
        portfolio = Portfolio.from_mapping(model, json.loads(Path(portfolio_path).read_text()))
    else:
        portfolio = Portfolio.from_model(model)
    try:
        summary = posterior_risk(model, portfolio, observed, snapshot=snapshot,
                                 mode=mode, success_state=success_state)
        avail = availability(model, portfolio)
    except ModelError as exc:
        raise CliError(str(exc))
    click.echo(f"goal: {model.goal_id()}")
    click.echo(f"P(E) attack likelihood : {summary.attack_likelihood:.6f}")
    click.echo(f"P(I) severe impact     : {summary.severe_impact:.6f}")
    click.echo(f"R    composite risk    : {summary.composite_risk:.6f}")
    click.echo(f"availability           : {avail:.6f}")


@main.command()
@click.argument("model_spec")
@click.option("--trials", type=int, required=True, help="Trials per run.")
@click.option("--runs", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sampler", type=click.Choice(["uniform", "adaptive"]), default="uniform",
              show_default=True)
@click.option("--workers", type=int, default=None, help="Parallel evaluation workers.")
@click.option("--evidence", "-e", multiple=True)
@click.option("--epss", default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Run directory for front/trials exports (default: ./runs/<model>-s<seed>).")
@click.pass_obj
def optimise(config: dict, model_spec: str, trials: int, runs: int, seed: int, sampler: str,
             workers: int | None, evidence: tuple[str, ...], epss: str | None,
             out_dir: str | None) -> None:
    """Search countermeasure portfolios; write per-run front and trial CSVs."""
    model = _load_model(model_spec)
    snapshot = _load_snapshot(epss, config)
    observed = _parse_evidence(evidence)
    n_workers = int(_setting(workers, "CPSDSS_WORKERS", config, "workers", 1))
    out = Path(out_dir) if out_dir else Path("runs") / f"{Path(model_spec).stem}-s{seed}"
    out.mkdir(parents=True, exist_ok=True)

    fronts: list[ParetoFront] = []
    tops = []
    for r in range(runs):
        run_config = OptimisationConfig(
            trial_count=trials, seed=seed + r, sampler=sampler,
            evidence=observed, workers=n_workers)
        try:
            all_trials, front = run_optimisation(model, run_config, snapshot=snapshot)
        except ModelError as exc:
            raise CliError(str(exc))
        run_dir = out / f"run-{r:04d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "front.csv").write_text(export_front_csv(front))
        _write_trials_csv(run_dir / "trials.csv", all_trials)
        fronts.append(front)
        top = select_top_portfolio(front)
        tops.append(top)
        click.echo(
            f"run {r}: seed {seed + r}, {len(front)} front members, "
            f"top trial {top.trial_id} (likelihood {top.objectives[0]:.6f}, "
            f"availability {top.objectives[2]:.6f})")

    summary: dict = {
        "model": str(resolve_model_path(model_spec)),
        "trials_per_run": trials,
        "runs": runs,
        "base_seed": seed,
        "sampler": sampler,
        "evidence": observed,
        "top_trials": [t.trial_id for t in tops],
    }
    if runs > 1:
        report = frequency_rank([t.portfolio for t in tops], trials_per_run=trials)
        summary["average_ranks"] = report.average_ranks
        summary["front_dispersion"] = front_dispersion(fronts)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    click.echo(f"wrote {out}/summary.json")


def _write_trials_csv(path: Path, trials) -> None:
    vuln_ids = trials[0].portfolio.ids()
    lines = [",".join(("trial_id", "likelihood", "impact", "availability", *vuln_ids))]
    for t in trials:
        lik, imp, av = t.objectives
        row = [str(t.trial_id), repr(lik), repr(imp), repr(av)]
        row.extend(repr(v) for v in t.portfolio.values())
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def _load_run_fronts(run_dir: Path) -> list[ParetoFront]:
    front_files = sorted(run_dir.glob("run-*/front.csv"))
    if not front_files and (run_dir / "front.csv").exists():
        front_files = [run_dir / "front.csv"]
    if not front_files:
        raise CliError(f"no front.csv files under {run_dir}")
    return [parse_front_csv(p.read_text()) for p in front_files]


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the rank report JSON here instead of stdout.")
def rank(run_dir: str, out_path: str | None) -> None:
    """Frequency-based rank report over the top portfolios of a run directory."""
    fronts = _load_run_fronts(Path(run_dir))
    tops = [select_top_portfolio(f) for f in fronts]
    report = frequency_rank([t.portfolio for t in tops],
                            trials_per_run=fronts[0].trial_count)
    payload = {
        "average_ranks": report.average_ranks,
        "run_count": report.run_count,
        "trials_per_run": report.trials_per_run,
        "priority_order": sorted(report.average_ranks, key=report.average_ranks.get),
    }
    text = json.dumps(payload, indent=2) + "\n"
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("front_file", type=click.Path(exists=True))
@click.option("--bandwidth", default=None, type=float,
              help="Explicit KDE bandwidth (default: Scott's rule).")
def stability(front_file: str, bandwidth: float | None) -> None:
    """KDE density metrics of one front export."""
    front = parse_front_csv(Path(front_file).read_text())
    try:
        metrics = stability_metrics(front, bandwidth if bandwidth is not None else "scott")
    except ModelError as exc:
        raise CliError(str(exc))
    click.echo(json.dumps({
        "average_density": metrics.average_density,
        "min_density": metrics.min_density,
        "max_density": metrics.max_density,
        "density_variance": metrics.density_variance,
        "density_entropy": metrics.density_entropy,
        "points": len(front.trials),
    }, indent=2) + "\n", nl=False)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def export(run_dir: str, fmt: str, out_path: str | None) -> None:
    """Re-emit stored run results as CSV (fronts) or JSON (ranks, stability)."""
    fronts = _load_run_fronts(Path(run_dir))
    if fmt == "csv":
        text = "".join(export_front_csv(f) for f in fronts)
    else:
        tops = [select_top_portfolio(f) for f in fronts]
        payload = {
            "fronts": [
                {
                    "run_seed": f.run_seed,
                    "trial_count": f.trial_count,
                    "trials": [
                        {"trial_id": t.trial_id,
                         "likelihood": t.objectives[0],
                         "impact": t.objectives[1],
                         "availability": t.objectives[2],
                         "portfolio": t.portfolio.as_dict()}
                        for t in f.trials
                    ],
                }
                for f in fronts
            ],
        }
        if len(fronts) > 1:
            report = frequency_rank([t.portfolio for t in tops],
                                    trials_per_run=fronts[0].trial_count)
            payload["rank_report"] = {
                "average_ranks": report.average_ranks,
                "run_count": report.run_count,
                "trials_per_run": report.trials_per_run,
            }
        stable = [f for f in fronts if len(f.trials) >= 2]
        if stable:
            metrics = stability_metrics(stable[0])
            payload["stability"] = {
                "average_density": metrics.average_density,
                "min_density": metrics.min_density,
                "max_density": metrics.max_density,
                "density_variance": metrics.density_variance,
                "density_entropy": metrics.density_entropy,
            }
        text = json.dumps(payload, indent=2) + "\n"
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Figure directory (default: the run directory itself).")
def report(run_dir: str, out_dir: str | None) -> None:
    """Render front projections and the rank chart as PNG files."""
    from .report import render_front_projections, render_rank_chart

    run_path = Path(run_dir)
    fronts = _load_run_fronts(run_path)
    target = Path(out_dir) if out_dir else run_path
    written = render_front_projections(fronts, target)
    if len(fronts) > 1:
        tops = [select_top_portfolio(f) for f in fronts]
        rank_report = frequency_rank([t.portfolio for t in tops],
                                     trials_per_run=fronts[0].trial_count)
        written.append(render_rank_chart(rank_report, target))
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--addr", default=None, help="host:port to listen on (default 127.0.0.1:8400).")
@click.option("--workers", type=int, default=None, help="Optimisation job workers.")
@click.option("--data-dir", default=None, help="Persistence directory for models and jobs.")
@click.option("--epss", default=None)
@click.pass_obj
def serve(config: dict, addr: str | None, workers: int | None, data_dir: str | None,
          epss: str | None) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    addr = _setting(addr, "CPSDSS_ADDR", config, "addr", "127.0.0.1:8400")
    host, _, port = addr.partition(":")
    n_workers = int(_setting(workers, "CPSDSS_WORKERS", config, "workers", 2))
    data = _setting(data_dir, "CPSDSS_DATA_DIR", config, "data_dir")
    snapshot_path = _setting(epss, "CPSDSS_EPSS_SNAPSHOT", config, "epss_snapshot")
    app = create_app(data_dir=data, snapshot_path=snapshot_path, job_workers=n_workers)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8400), log_level="info")


if __name__ == "__main__":
    main()
