"""
Tests for the experiment pipeline and the command-line front end.
"""

import json

import pytest

from degenerate_diffusion import experiments
from degenerate_diffusion.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, build_parser, config_from_args, run
from degenerate_diffusion.config import ExperimentConfig, Settings
from degenerate_diffusion.core_paths import MCEstimate
from degenerate_diffusion.errors import VerificationFailure
from degenerate_diffusion.experiments import SUITE, SuiteEntry, VerificationPipeline, build_experiment
from degenerate_diffusion.reports import Statistic, VerificationReport


def _output(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


def _report(passed_flags):
    report = VerificationReport("fake", 1)
    for i, passed in enumerate(passed_flags):
        report.add(Statistic(f"s{i}", MCEstimate(0.0, 0.0, 1), 0.0, passed, "tolerance"))
    return report


class TestExperiments:
    """Config resolution and the verification gate"""

    def test_build_experiment_defaults(self):
        experiment = build_experiment(ExperimentConfig(verifier="verify-wick", model="M3", n_steps=8))
        assert experiment.model.name == "M3_rotating_frame"
        assert experiment.basis.kind == "fourier"
        assert experiment.basis.degree == 2
        assert experiment.h.hdot.shape == (8, 2)
        assert experiment.u.name.startswith("constant")

    def test_basis_overrides(self):
        config = ExperimentConfig(verifier="represent", model="M2", degree=1, lags=[0])
        experiment = build_experiment(config)
        assert experiment.basis.describe() == {"kind": "polynomial", "degree": 1, "lags": [0]}

    def test_escalation_reruns_with_more_paths(self, monkeypatch):
        calls = []

        def fake(experiment, n_paths):
            calls.append(n_paths)
            return _report([len(calls) > 1] + [True] * 9)

        monkeypatch.setitem(experiments.VERIFIERS, "simulate", fake)
        pipeline = VerificationPipeline()
        report = pipeline.run(ExperimentConfig(verifier="simulate", n_paths=100))
        assert calls == [100, 400]
        assert report.passed
        assert report.diagnostics["escalated_to_paths"] == 400
        assert pipeline.history[-1]["status"] == "passed"

    def test_widespread_failure_is_not_escalated(self, monkeypatch):
        calls = []

        def fake(experiment, n_paths):
            calls.append(n_paths)
            return _report([False, False, True])

        monkeypatch.setitem(experiments.VERIFIERS, "simulate", fake)
        report = VerificationPipeline().run(ExperimentConfig(verifier="simulate", n_paths=100))
        assert calls == [100]
        with pytest.raises(VerificationFailure) as excinfo:
            VerificationPipeline.gate(report)
        assert excinfo.value.to_dict()["failed"] == ["s0", "s1"]

    def test_suite_covers_the_acceptance_battery(self):
        labels = [entry.label for entry in SUITE]
        assert len(labels) == len(set(labels))
        assert [entry.label for entry in SUITE if not entry.expect_pass] == ["monge-ampere-M3-mismatched"]
        verifiers = {entry.overrides["verifier"] for entry in SUITE}
        assert verifiers == set(experiments.VERIFIERS) - {"simulate"}

    def test_suite_matches_expectations(self, monkeypatch, tmp_path):
        battery = [
            SuiteEntry("wick", {"verifier": "verify-wick", "model": "M2", "n_paths": 500, "n_steps": 8, "h": "1, 0"}),
            SuiteEntry("control", {"verifier": "monge-ampere", "model": "M3", "n_paths": 2000, "n_steps": 16,
                                   "v": "0.5*cos(x1), 0.5*sin(x1)", "negative_control": True}, expect_pass=False),
        ]
        monkeypatch.setattr(experiments, "SUITE", battery)
        config = ExperimentConfig(seed=5, escalate=False)
        report = VerificationPipeline().run_suite(config, tmp_path)
        assert report.passed
        assert [s.label for s in report.statistics] == ["wick", "control"]
        assert (tmp_path / "wick" / "report.json").exists()
        assert (tmp_path / "control" / "stats.csv").exists()

    def test_suite_scale(self):
        entry = SuiteEntry("wick", {"verifier": "verify-wick", "model": "M2", "n_paths": 1000, "n_steps": 8,
                                    "h": "1, 0"})
        entry_config, report = VerificationPipeline().run_entry(ExperimentConfig(suite_scale=0.5), entry)
        assert entry_config.n_paths == 500
        assert report.config["n_paths"] == 500


class TestArguments:
    """Flag parsing and precedence"""

    def test_flags_override_config_file(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("model: M3\nn_paths: 2000\nseed: 11\n")
        args = build_parser().parse_args(["represent", "--config", str(path), "--n-paths", "300",
                                          "--lags", "0", "2"])
        config = config_from_args(args, Settings())
        assert (config.verifier, config.model, config.n_paths, config.seed) == ("represent", "M3", 300, 11)
        assert config.lags == [0, 2]

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["integrate"])


class TestRun:
    """Exit codes and JSON output"""

    def test_passing_run(self, tmp_path, capsys):
        code = run(["verify-wick", "--model", "M2", "--h", "1, 0", "--n-steps", "8", "--n-paths", "500",
                    "--seed", "3", "--out", str(tmp_path)])
        assert code == EXIT_OK
        output = _output(capsys)
        assert output["status"] == "passed"
        document = json.loads((tmp_path / "report.json").read_text())
        assert document["config"]["seed"] == 3
        assert document["config"]["h"] == "1, 0"

    def test_failing_run(self, tmp_path, capsys):
        code = run(["monge-ampere", "--model", "M3", "--v", "0.5*cos(x1), 0.5*sin(x1)", "--negative-control",
                    "--n-steps", "16", "--n-paths", "2000", "--no-escalate", "--out", str(tmp_path)])
        assert code == EXIT_FAILED
        output = _output(capsys)
        assert output["error"] == "verification-failure"
        assert "Monge-Ampere residual energy" in output["failed"]
        assert (tmp_path / "stats.csv").exists()

    def test_malformed_config(self, tmp_path, capsys):
        path = tmp_path / "broken.yaml"
        path.write_text("model: [M1\n")
        assert run(["represent", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
        assert _output(capsys)["error"] == "config-error"

    def test_unknown_model(self, tmp_path, capsys):
        assert run(["simulate", "--model", "M9", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert _output(capsys)["error"] == "invalid-argument"

    def test_invalid_size(self, tmp_path, capsys):
        assert run(["simulate", "--n-paths", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
        output = _output(capsys)
        assert output["location"] == "n_paths"
