import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from policy_surrogate import synthetic
from policy_surrogate.domain import write_county_features_csv
from policy_surrogate.simulator import save_params_json


def write_problem_files(directory: Path, n_counties=6, seed=0,
                        noise=(1.0, 8.0)) -> dict:
    """Synthetic county CSV + linear-truth params + a minimal run config."""
    directory.mkdir(parents=True, exist_ok=True)
    counties = synthetic.make_counties(n_counties, seed=seed)
    truth = synthetic.make_linear_truth(counties, seed=seed + 1,
                                        noise_sd_range=noise)
    write_county_features_csv(directory / "counties.csv", counties)
    save_params_json(directory / "truth.json", truth)
    config = {
        "paths": {"county_csv": "counties.csv", "params_json": "truth.json",
                  "output_dir": "artifact"},
        "init": {"replicates_baseline": 6, "replicates_other": 2},
        "budget": 200,
        "simulator": "linear",
        "seed": 0,
    }
    (directory / "config.json").write_text(json.dumps(config), encoding="utf-8")
    return config


@pytest.fixture(scope="session")
def run_artifact_dir(tmp_path_factory) -> Path:
    """A small fitted artifact produced through the real CLI `run` command."""
    from policy_surrogate.cli import main

    base = tmp_path_factory.mktemp("artifact_base")
    write_problem_files(base)
    rc = main(["run", "--config", str(base / "config.json"), "--seed", "11"])
    assert rc == 0
    return base / "artifact"
