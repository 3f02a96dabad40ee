import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from cpsdss.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def invoke(runner, *args, **kwargs):
    result = runner.invoke(main, list(args), catch_exceptions=False, **kwargs)
    return result


class TestValidate:
    def test_valid_fixture(self, runner, fixtures_dir):
        result = invoke(runner, "validate", str(fixtures_dir / "solar_pv"))
        assert result.exit_code == 0
        assert "ok" in result.output

    def test_extension_optional(self, runner, fixtures_dir):
        with_ext = invoke(runner, "validate", str(fixtures_dir / "solar_pv.json"))
        assert with_ext.exit_code == 0

    def test_invalid_document(self, runner, tmp_path, solar_document):
        broken = json.loads(json.dumps(solar_document))
        broken["nodes"][0]["attrs"]["mitigation_prob"] = 2.0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(broken))
        result = invoke(runner, "validate", str(bad))
        assert result.exit_code == 1

    def test_missing_file(self, runner):
        result = invoke(runner, "validate", "no/such/model")
        assert result.exit_code == 2


class TestInfer:
    def test_prints_risk_lines(self, runner, fixtures_dir):
        result = invoke(runner, "infer", str(fixtures_dir / "solar_pv"),
                        "--epss", str(fixtures_dir / "epss_snapshot.csv"))
        assert result.exit_code == 0
        for token in ("P(E)", "P(I)", "composite risk", "availability"):
            assert token in result.output

    def test_evidence_flag(self, runner, fixtures_dir):
        base = invoke(runner, "infer", str(fixtures_dir / "solar_pv"),
                      "--epss", str(fixtures_dir / "epss_snapshot.csv"))
        stressed = invoke(runner, "infer", str(fixtures_dir / "solar_pv"),
                          "--epss", str(fixtures_dir / "epss_snapshot.csv"),
                          "-e", "A3_WiNet_S_Dongle=1")
        assert stressed.exit_code == 0
        assert base.output != stressed.output

    def test_portfolio_file(self, runner, fixtures_dir, tmp_path, solar_model):
        portfolio = {vid: 1.0 for vid in solar_model.vulnerability_ids()}
        pf = tmp_path / "portfolio.json"
        pf.write_text(json.dumps(portfolio))
        result = invoke(runner, "infer", str(fixtures_dir / "solar_pv"),
                        "--epss", str(fixtures_dir / "epss_snapshot.csv"),
                        "--portfolio", str(pf))
        assert result.exit_code == 0
        assert "P(E) attack likelihood : 0.000000" in result.output

    def test_bad_evidence_syntax(self, runner, fixtures_dir):
        result = invoke(runner, "infer", str(fixtures_dir / "solar_pv"), "-e", "V1:1")
        assert result.exit_code == 2


class TestOptimise:
    def test_run_writes_exports(self, runner, fixtures_dir, tmp_path):
        out = tmp_path / "out"
        result = invoke(runner, "optimise", str(fixtures_dir / "cbtc"),
                        "--trials", "50", "--runs", "2", "--seed", "7",
                        "--out", str(out))
        assert result.exit_code == 0
        assert (out / "run-0000" / "front.csv").exists()
        assert (out / "run-0001" / "trials.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["runs"] == 2
        assert "average_ranks" in summary

    def test_byte_identical_reruns(self, runner, fixtures_dir, tmp_path):
        outputs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            result = invoke(runner, "optimise", str(fixtures_dir / "blackenergy"),
                            "--trials", "200", "--runs", "2", "--seed", "7",
                            "--epss", str(fixtures_dir / "epss_snapshot.csv"),
                            "--out", str(out))
            assert result.exit_code == 0
            outputs.append([
                (out / "run-0000" / "front.csv").read_bytes(),
                (out / "run-0001" / "front.csv").read_bytes(),
            ])
        assert outputs[0] == outputs[1]


class TestRunDirectoryTools:
    @pytest.fixture()
    def run_dir(self, runner, fixtures_dir, tmp_path):
        out = tmp_path / "runs"
        invoke(runner, "optimise", str(fixtures_dir / "cbtc"),
               "--trials", "400", "--runs", "3", "--seed", "3", "--out", str(out))
        return out

    def test_rank(self, runner, run_dir):
        result = invoke(runner, "rank", str(run_dir))
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert payload["run_count"] == 3
        assert set(payload["average_ranks"]) == {f"V{i}" for i in range(1, 9)}

    def test_stability(self, runner, run_dir):
        front = next(iter(sorted(run_dir.glob("run-*/front.csv"))))
        result = invoke(runner, "stability", str(front))
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert payload["min_density"] <= payload["average_density"] <= payload["max_density"]

    def test_export_csv(self, runner, run_dir):
        result = invoke(runner, "export", str(run_dir), "--format", "csv")
        assert result.exit_code == 0
        assert result.output.count("trial_id,likelihood,impact,availability") == 3

    def test_export_json(self, runner, run_dir):
        result = invoke(runner, "export", str(run_dir), "--format", "json")
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert len(payload["fronts"]) == 3
        assert "rank_report" in payload
        assert "stability" in payload

    def test_report_renders_figures(self, runner, run_dir, tmp_path):
        figures = tmp_path / "figures"
        result = invoke(runner, "report", str(run_dir), "--out", str(figures))
        assert result.exit_code == 0
        written = sorted(p.name for p in figures.glob("*.png"))
        assert "front_likelihood_availability.png" in written
        assert "ranks.png" in written
        assert len(written) == 4


class TestServeWiring:
    def test_serve_honours_env(self, runner, monkeypatch, fixtures_dir):
        captured = {}

        def fake_run(app, host, port, log_level):
            captured.update(host=host, port=port)

        monkeypatch.setattr("uvicorn.run", fake_run)
        monkeypatch.setenv("CPSDSS_ADDR", "0.0.0.0:9999")
        monkeypatch.setenv("CPSDSS_EPSS_SNAPSHOT", str(fixtures_dir / "epss_snapshot.csv"))
        result = invoke(runner, "serve")
        assert result.exit_code == 0
        assert captured == {"host": "0.0.0.0", "port": 9999}
