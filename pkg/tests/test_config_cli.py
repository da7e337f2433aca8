import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from policy_surrogate.cli import main
from policy_surrogate.config import (ConfigError, load_config, parse_config,
                                     save_config)

from conftest import write_problem_files


class TestConfigParsing:
    def test_minimal_config_fills_defaults(self, tmp_path):
        write_problem_files(tmp_path)
        cfg = load_config(tmp_path / "config.json")
        assert (cfg.grid.levels_n, cfg.grid.levels_b) == (5, 5)
        assert cfg.acquisition.weights == (1 / 3, 1 / 3, 1 / 3)
        assert cfg.acquisition.s == 256
        assert cfg.strategy == "two-stage"
        assert cfg.noise == "hetero"
        assert cfg.response == "main"
        assert cfg.plateau_tol is None

    def test_unknown_top_level_key_rejected(self, tmp_path):
        doc = write_problem_files(tmp_path)
        doc["bogus"] = 1
        with pytest.raises(ConfigError, match="unknown keys.*bogus"):
            parse_config(doc, tmp_path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        doc = write_problem_files(tmp_path)
        doc["acquisition"] = {"weights": [0.5, 0.25, 0.25], "typo": True}
        with pytest.raises(ConfigError, match="unknown keys in acquisition"):
            parse_config(doc, tmp_path)

    def test_missing_referenced_file(self, tmp_path):
        doc = write_problem_files(tmp_path)
        doc["paths"]["county_csv"] = "nope.csv"
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(doc, tmp_path)

    def test_budget_below_init_cost(self, tmp_path):
        doc = write_problem_files(tmp_path)
        doc["budget"] = 5
        with pytest.raises(ConfigError, match="below the initialization cost"):
            parse_config(doc, tmp_path)

    def test_roundtrip_identity(self, tmp_path):
        write_problem_files(tmp_path)
        cfg = load_config(tmp_path / "config.json")
        save_config(tmp_path / "echo.json", cfg)
        again = load_config(tmp_path / "echo.json")
        assert again == cfg

    def test_bad_choice_rejected(self, tmp_path):
        doc = write_problem_files(tmp_path)
        doc["strategy"] = "three-stage"
        with pytest.raises(ConfigError, match="strategy"):
            parse_config(doc, tmp_path)


class TestCliRun:
    def test_run_writes_artifact(self, run_artifact_dir):
        assert (run_artifact_dir / "artifact.json").exists()
        assert (run_artifact_dir / "history.csv").exists()
        assert (run_artifact_dir / "coefficients.csv").exists()

    def test_byte_identical_reruns(self, tmp_path):
        write_problem_files(tmp_path)
        outputs = []
        for name in ("a", "b"):
            rc = main(["run", "--config", str(tmp_path / "config.json"),
                       "--seed", "7", "--out", str(tmp_path / name)])
            assert rc == 0
            outputs.append({
                "history": (tmp_path / name / "history.csv").read_bytes(),
                "coefficients": (tmp_path / name / "coefficients.csv").read_bytes(),
            })
        assert outputs[0]["history"] == outputs[1]["history"]
        assert outputs[0]["coefficients"] == outputs[1]["coefficients"]

    def test_strategy_and_noise_overrides(self, tmp_path):
        write_problem_files(tmp_path)
        rc = main(["run", "--config", str(tmp_path / "config.json"),
                   "--seed", "3", "--out", str(tmp_path / "one"),
                   "--strategy", "one-stage", "--noise", "homo"])
        assert rc == 0
        doc = json.loads((tmp_path / "one" / "artifact.json").read_text())
        assert doc["config_echo"]["strategy"] == "one-stage"
        assert doc["config_echo"]["noise"] == "homo"

    def test_content_hash_present(self, run_artifact_dir):
        doc = json.loads((run_artifact_dir / "artifact.json").read_text())
        assert len(doc["content_hash"]) == 64

    def test_rerun_from_config_echo_reproduces_artifact(self, run_artifact_dir,
                                                        tmp_path):
        doc = json.loads((run_artifact_dir / "artifact.json").read_text())
        echo = tmp_path / "echo.json"
        echo.write_text(json.dumps(doc["config_echo"]), encoding="utf-8")
        rc = main(["run", "--config", str(echo), "--seed", str(doc["seed"]),
                   "--out", str(tmp_path / "replay")])
        assert rc == 0
        assert (tmp_path / "replay" / "history.csv").read_bytes() == \
            (run_artifact_dir / "history.csv").read_bytes()
        assert (tmp_path / "replay" / "coefficients.csv").read_bytes() == \
            (run_artifact_dir / "coefficients.csv").read_bytes()


class TestCliEvaluateExport:
    def test_evaluate_writes_learning_curve(self, run_artifact_dir, capsys):
        rc = main(["evaluate", "--artifact", str(run_artifact_dir)])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["points"] >= 2
        lc = Path(out["learning_curve"])
        assert lc.exists()
        assert len(lc.read_text().splitlines()) >= 3

    def test_export_writes_tables(self, run_artifact_dir, tmp_path, capsys):
        rc = main(["export", "--artifact", str(run_artifact_dir),
                   "--out", str(tmp_path / "exports")])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert any(p.endswith("coefficients.csv") for p in out["written"])
        assert any(p.endswith("factorial.csv") for p in out["written"])
        header = (tmp_path / "exports" / "coefficients.csv").read_text().splitlines()[0]
        assert header == ("county_id,mu0,mu0_lo,mu0_hi,mu_n,mu_n_lo,mu_n_hi,"
                          "mu_b,mu_b_lo,mu_b_hi")

    def test_export_assignment_with_summaries(self, run_artifact_dir, tmp_path,
                                              capsys):
        summaries = {f"C{i:03d}": {
            "mean_death_rate": 10.0 + i, "death_slope": 0.1 * i,
            "opioid_slope_mag": 1.0, "nal_slope_mag": 0.5,
            "bup_slope_mag": 0.2, "fent_slope_mag": 0.3,
            "population": 1e4 * (i + 1)} for i in range(6)}
        spath = tmp_path / "summaries.json"
        spath.write_text(json.dumps(summaries), encoding="utf-8")
        rc = main(["export", "--artifact", str(run_artifact_dir),
                   "--out", str(tmp_path / "exports"),
                   "--summaries", str(spath), "--prototypes", "C000,C003"])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert any(p.endswith("assignment.csv") for p in out["written"])


class TestCliSimulate:
    def test_linear_mode_outputs_json_lines(self, tmp_path, capsys):
        write_problem_files(tmp_path)
        rc = main(["simulate", "--params", str(tmp_path / "truth.json"),
                   "--mode", "linear", "--county", "C000", "--n", "1",
                   "--b", "2", "--replicates", "3", "--seed", "5"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        row = json.loads(lines[0])
        assert row["county_id"] == "C000" and row["n"] == 1 and row["b"] == 2

    def test_oud_mode_runs(self, tmp_path, capsys):
        from policy_surrogate import synthetic
        from policy_surrogate.simulator import save_params_json
        counties = synthetic.make_counties(2, seed=1)
        save_params_json(tmp_path / "oud.json",
                         synthetic.make_oud_params(counties, seed=2))
        rc = main(["simulate", "--params", str(tmp_path / "oud.json"),
                   "--county", "C000", "--n", "0", "--b", "0",
                   "--replicates", "2", "--cohort", "500", "--seed", "1"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2


class TestCliOudMode:
    @pytest.fixture()
    def oud_setup(self, tmp_path):
        from policy_surrogate import synthetic
        from policy_surrogate.domain import write_county_features_csv
        from policy_surrogate.simulator import save_params_json
        counties = synthetic.make_counties(4, seed=8)
        write_county_features_csv(tmp_path / "counties.csv", counties)
        save_params_json(tmp_path / "oud.json",
                         synthetic.make_oud_params(counties, seed=9))
        config = {
            "paths": {"county_csv": "counties.csv", "params_json": "oud.json",
                      "output_dir": "artifact"},
            "init": {"replicates_baseline": 5, "replicates_other": 2},
            "budget": 70,
            "simulator": "oud",
            "sim": {"horizon_years": 2, "steps_per_year": 12,
                    "cohort_size": 2000},
            "seed": 1,
        }
        (tmp_path / "config.json").write_text(json.dumps(config),
                                              encoding="utf-8")
        return tmp_path

    def test_analytic_truth_run(self, oud_setup, capsys):
        rc = main(["run", "--config", str(oud_setup / "config.json")])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["budget_used"] <= 70
        assert (oud_setup / "artifact" / "artifact.json").exists()

    def test_holdout_truth_run(self, oud_setup, capsys):
        doc = json.loads((oud_setup / "config.json").read_text())
        doc["truth"] = "holdout"
        doc["holdout_replicates"] = 4
        doc["paths"]["output_dir"] = "artifact_holdout"
        (oud_setup / "config2.json").write_text(json.dumps(doc),
                                                encoding="utf-8")
        rc = main(["run", "--config", str(oud_setup / "config2.json")])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert math.isfinite(out["rel_error"])


class TestCliErrors:
    def test_bad_config_emits_json_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        rc = main(["run", "--config", str(bad)])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"

    def test_missing_artifact_emits_json_error(self, tmp_path, capsys):
        rc = main(["evaluate", "--artifact", str(tmp_path / "nowhere")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ArtifactError"

    def test_console_entrypoint(self):
        proc = subprocess.run([sys.executable, "-m", "policy_surrogate.cli",
                               "run", "--config", "/does/not/exist.json"],
                              capture_output=True, text=True)
        assert proc.returncode == 1
        err = json.loads(proc.stderr)
        assert "error" in err
