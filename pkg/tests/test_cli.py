import json
import os
import tempfile
from typing import Any, Dict

import pandas as pd
import pytest

from src.cli import main
from src.config_io import write_yaml

SIMULATE_CONFIG = {
    "seed": 7,
    "simulate": {
        "t": 48,
        "n": 3,
        "schedule": "000000111111",
        "scm": {"kind": "additive", "beta": 0.5, "noise_sd": 1.0},
    },
}

BASIC_SCM = {
    "variant": "basic",
    "y_values": [0.0, 1.0, 2.0],
    "y_kernel": [[[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]]],
}


@pytest.fixture(autouse=True)
def _quiet_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("NOF1_OUTPUT_DIR", "NOF1_WORKERS", "NOF1_MC_BLOCK", "NOF1_CI_LEVEL", "NOF1_LOG_FILE"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("NOF1_LOG_LEVEL", "WARNING")


def _config(directory: str, doc: Dict[str, Any]) -> str:
    path = os.path.join(directory, "run.yaml")
    write_yaml(doc, path)
    return path


def _report(directory: str) -> Dict[str, Any]:
    with open(os.path.join(directory, "report.json")) as f:
        return json.load(f)


def test_simulate_is_reproducible() -> None:
    """Test that the same config and seed give byte-identical reports and panels."""
    with tempfile.TemporaryDirectory() as tmp:
        config = _config(tmp, SIMULATE_CONFIG)
        first, second = os.path.join(tmp, "first"), os.path.join(tmp, "second")
        assert main(["simulate", "--config", config, "--out", first]) == 0
        assert main(["simulate", "--config", config, "--out", second]) == 0
        for name in ("report.json", "manifest.csv", "trajectory_0001.csv", "trajectory_0003.csv"):
            with open(os.path.join(first, name)) as f, open(os.path.join(second, name)) as g:
                assert f.read() == g.read()

        report = _report(first)
        assert report["command"] == "simulate"
        assert report["seed"] == 7
        assert len(report["results"]["trajectories"]) == 3
        assert report["results"]["true_effects"] == {"effect": 0.5}
        with open(os.path.join(first, "run_metadata.json")) as f:
            metadata = json.load(f)
        assert metadata["config_digest"] == report["config_digest"]
        assert "started_at" in metadata

        assert main(["simulate", "--config", config, "--seed", "8", "--out", second]) == 0
        assert _report(second)["results"] != report["results"]


def test_simulate_then_estimate_and_aggregate() -> None:
    """Test the estimate and aggregate commands on simulated panels."""
    with tempfile.TemporaryDirectory() as tmp:
        config = _config(tmp, SIMULATE_CONFIG)
        sim = os.path.join(tmp, "sim")
        assert main(["simulate", "--config", config, "--out", sim]) == 0
        manifest = pd.read_csv(os.path.join(sim, "manifest.csv"), dtype={"id": str})

        est = os.path.join(tmp, "estimate")
        panel = os.path.join(sim, "trajectory_0001.csv")
        assert main(["estimate", "--data", panel, "--schedule", "000000111111", "--out", est]) == 0
        results = _report(est)["results"]
        assert results["estimate"]["point"] == pytest.approx(manifest["tau_hat"][0])
        assert results["estimate"]["method"] == "mean-difference/normal"
        assert results["t_test"]["df"] > 0

        agg = os.path.join(tmp, "aggregate")
        assert main(["aggregate", "--data", os.path.join(sim, "manifest.csv"), "--out", agg]) == 0
        results = _report(agg)["results"]
        assert results["individuals"] == 3
        assert results["estimate"]["point"] == pytest.approx(manifest["tau_hat"].mean())
        effects = pd.read_csv(os.path.join(agg, "individual_effects.csv"), dtype={"id": str})
        assert effects["id"].tolist() == ["0001", "0002", "0003"]


def test_gformula_from_known_kernels() -> None:
    """Test the exact recursion for a configured SCM, with table and graphic."""
    with tempfile.TemporaryDirectory() as tmp:
        config = _config(tmp, {"gformula": {"t": 6, "scm": BASIC_SCM}})
        out = os.path.join(tmp, "out")
        assert main(["gformula", "--config", config, "--out", out]) == 0
        results = _report(out)["results"]
        assert results["oracle"] == pytest.approx([0.6] * 6, abs=1e-12)
        assert [e["time"] for e in results["effects"]] == [1, 2, 3, 4, 5, 6]
        assert os.path.exists(os.path.join(out, "effects.csv"))
        assert os.path.exists(os.path.join(out, "effects.svg"))


def test_gformula_from_data_and_diagnose() -> None:
    """Test kernel estimation from a simulated discrete panel and the diagnostics table."""
    with tempfile.TemporaryDirectory() as tmp:
        doc = {"seed": 3, "simulate": {"t": 96, "n": 1, "schedule": "000000111111", "scm": dict(BASIC_SCM)}}
        config = _config(tmp, doc)
        sim = os.path.join(tmp, "sim")
        assert main(["simulate", "--config", config, "--out", sim]) == 0
        panel = os.path.join(sim, "trajectory_0001.csv")

        out = os.path.join(tmp, "gformula")
        assert main(["gformula", "--data", panel, "--out", out]) == 0
        results = _report(out)["results"]
        assert results["method"] == "dp"
        assert len(results["effects"]) == 95
        assert results["effects"][0]["method"] == "gformula-dp/no-ci"
        assert os.path.exists(os.path.join(out, "kernels.yaml"))

        diag = os.path.join(tmp, "diagnose")
        assert main(["diagnose", "--data", panel, "--out", diag]) == 0
        assert len(pd.read_csv(os.path.join(diag, "diagnostics.csv"))) == 6


def test_validate_command() -> None:
    """Test running a selected suite from the command line."""
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        assert main(["validate", "--suite", "degenerate", "--suite", "design-average", "--seed", "0",
                     "--out", out]) == 0
        results = _report(out)["results"]
        assert results["passed"] is True
        assert [s["suite"] for s in results["suites"]] == ["degenerate-noise", "design-average"]


def test_exit_codes() -> None:
    """Test 1 for invalid input and 2 for estimation failures."""
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        assert main(["simulate", "--seed", "abc", "--out", out]) == 1
        assert main(["forecast", "--out", out]) == 1
        assert main(["simulate", "--seed", "1", "--out", out]) == 1
        assert main(["simulate", "--config", os.path.join(tmp, "absent.yaml"), "--out", out]) == 1
        assert main(["estimate", "--out", out]) == 1

        treated_only = os.path.join(tmp, "treated.csv")
        with open(treated_only, "w") as f:
            f.write("time,treatment,outcome\n1,1,2.0\n2,1,3.0\n3,1,1.0\n")
        assert main(["estimate", "--data", treated_only, "--out", out]) == 2

        alternating = os.path.join(tmp, "alternating.csv")
        with open(alternating, "w") as f:
            f.write("time,treatment,outcome\n1,1,1\n2,0,0\n3,1,1\n4,0,0\n")
        assert main(["gformula", "--data", alternating, "--out", out]) == 2

        gapped = os.path.join(tmp, "gapped.csv")
        with open(gapped, "w") as f:
            f.write("time,treatment,outcome\n1,1,1\n3,0,0\n")
        assert main(["estimate", "--data", gapped, "--out", out]) == 1
        assert not os.path.exists(os.path.join(out, "report.json"))
