"""CLI behavior: artifacts, determinism, exit codes, error lines."""

import json
import subprocess
import sys

import pytest

from fluidmerge.cli import main

MERGE_CONFIG = {
    "schema": 1,
    "topology": "merge-only",
    "chain_1": {"a_plus": 3000, "lambda": 1.0, "mu": 1.5},
    "chain_2": {"a_plus": 3000, "lambda": 1.0, "mu": 1.5},
    "merge": {"F_1": 1500, "F_2": 1500, "R_3": 2500, "phi_1": 0.5},
    "horizon": 20,
    "seed": 11,
    "sample_interval": 5,
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


class TestSimulateCommand:
    def test_artifacts(self, tmp_path, capsys):
        config = write_config(tmp_path, MERGE_CONFIG)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
        lines = (out / "trajectory.csv").read_text().strip().split("\n")
        assert lines[0] == "t,mode,q1,q2,q31,q32,f13,f23,f34,f35"
        assert len(lines) == 1 + 5
        stats = json.loads((out / "stats.json").read_text())
        assert stats["horizon"] == 20
        # emitted reports re-parse under the published response schema
        from fluidmerge.service.schemas import StatsModel

        assert StatsModel.model_validate(stats).horizon == 20

    def test_byte_identical_reruns(self, tmp_path):
        config = write_config(tmp_path, MERGE_CONFIG)
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["simulate", "--config", str(config), "--out", str(out), "--quiet"]) == 0
            outputs.append(
                ((out / "trajectory.csv").read_bytes(), (out / "stats.json").read_bytes())
            )
        assert outputs[0] == outputs[1]

    def test_zero_horizon(self, tmp_path):
        config = write_config(tmp_path, dict(MERGE_CONFIG, horizon=0))
        out = tmp_path / "zero"
        assert main(["simulate", "--config", str(config), "--out", str(out), "--quiet"]) == 0
        lines = (out / "trajectory.csv").read_text().strip().split("\n")
        assert lines == ["t,mode,q1,q2,q31,q32,f13,f23,f34,f35"]
        stats = json.loads((out / "stats.json").read_text())
        assert stats["time_avg_q1"] == 0

    def test_seed_override_changes_output(self, tmp_path):
        config = write_config(tmp_path, MERGE_CONFIG)
        out_a, out_b = tmp_path / "s1", tmp_path / "s2"
        main(["simulate", "--config", str(config), "--out", str(out_a), "--quiet"])
        main(["simulate", "--config", str(config), "--out", str(out_b), "--seed", "99", "--quiet"])
        assert (out_a / "trajectory.csv").read_text() != (out_b / "trajectory.csv").read_text()


class TestClassifyCommand:
    def test_json_artifact(self, tmp_path, capsys):
        config = write_config(
            tmp_path,
            {"schema": 1, "phi_1": 0.5, "a_bar_1": 1200, "a_bar_2": 1200,
             "F_1": 1500, "F_2": 1500, "F_3": 3000, "R_4": 1400, "R_5": 1400},
        )
        out = tmp_path / "out"
        assert main(["classify", "--config", str(config), "--out", str(out)]) == 0
        body = json.loads((out / "classification.json").read_text())
        assert body["verdict"] == "merge-diverge stable"
        assert (body["in_phi0"], body["in_phi1"], body["in_phi2"]) == (1, 1, 1)
        printed = capsys.readouterr().out
        assert '"verdict": "merge-diverge stable"' in printed
        from fluidmerge.service.schemas import ClassifyResponse

        assert ClassifyResponse.model_validate(body).verdict == "merge-diverge stable"


class TestSweepCommand:
    def test_csv_artifact(self, tmp_path):
        config = write_config(
            tmp_path,
            {"schema": 1, "a_bar_1": 1200, "a_bar_2": 1200, "F_1": 1500, "F_2": 1500,
             "R_4": 1400, "R_5": 1400, "f3_values": [2500, 2600],
             "phi1_values": [0.0, 0.5, 1.0]},
        )
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(config), "--out", str(out), "--quiet"]) == 0
        lines = (out / "sweep.csv").read_text().strip().split("\n")
        assert lines[0] == "F3,phi1,in_phi0,in_phi1,in_phi2,verdict"
        assert lines[2].endswith("merge-diverge stable")


class TestEstimateCommand:
    def test_unstable_exit_code(self, tmp_path):
        config = write_config(
            tmp_path,
            dict(
                MERGE_CONFIG,
                merge={"F_1": 1500, "F_2": 1500, "R_3": 2500, "phi_1": 0.1},
                horizon=800,
                ensemble=4,
            ),
        )
        out = tmp_path / "est"
        code = main(["estimate", "--config", str(config), "--out", str(out), "--quiet"])
        assert code == 2
        body = json.loads((out / "estimate.json").read_text())
        assert body["verdict"] == "unstable"


class TestErrors:
    def test_missing_config(self, tmp_path, capsys):
        code = main(["simulate", "--config", str(tmp_path / "nope.json")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ") and err.count("\n") == 1

    def test_invalid_priority(self, tmp_path, capsys):
        config = write_config(
            tmp_path,
            dict(MERGE_CONFIG, merge={"F_1": 1500, "F_2": 1500, "R_3": 2500, "phi_1": 1.2}),
        )
        code = main(["simulate", "--config", str(config)])
        assert code == 1
        err = capsys.readouterr().err.strip().split("\n")[-1]
        assert "phi_1" in err and "[0, 1]" in err

    def test_standing_assumption(self, tmp_path, capsys):
        config = write_config(
            tmp_path,
            dict(
                MERGE_CONFIG,
                topology="merge-diverge",
                merge={"F_1": 1500, "F_2": 1500, "phi_1": 0.5},
                diverge={"F_3": 3000, "theta": 40, "R_4": 1400, "R_5": 1400},
            ),
        )
        assert main(["simulate", "--config", str(config)]) == 1
        assert "standing capacity assumption" in capsys.readouterr().err

    def test_bad_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["simulate", "--config", str(path)]) == 1
        assert "not valid JSON" in capsys.readouterr().err


class TestScriptWiring:
    def test_module_entrypoint(self, tmp_path):
        config = write_config(tmp_path, dict(MERGE_CONFIG, horizon=1, sample_interval=1))
        out = tmp_path / "sub"
        result = subprocess.run(
            [sys.executable, "-m", "fluidmerge.cli", "simulate",
             "--config", str(config), "--out", str(out), "--quiet"],
            capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr
        assert (out / "stats.json").exists()
