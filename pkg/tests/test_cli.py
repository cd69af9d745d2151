"""
CLI Tests
=========

Tests for the command-line entry point: sub-commands, overrides and exit codes.
"""

import json

import pytest

from src.analytics.config import RunConfig, default_config
from src.analytics.engine import ClassificationEngine
from src.cli.main import main, resolve_config, build_parser


def small_config(data_dir, out_dir, **ensemble) -> RunConfig:
    return RunConfig.model_validate({
        "seed": 5,
        "data": {
            "trajectories": str(data_dir / "trajectories.csv"),
            "labels": str(data_dir / "labels.csv"),
        },
        "semimetrics": [{"name": "globMax"}, {"name": "L2"}, {"name": "measure:distance"}],
        "folds": {"k_out": 4, "k_in": 3},
        "ensemble": {
            "kinds": ["RF-I", "LC"],
            "super_cv_folds": 3,
            "rf_n_trees": [20],
            "rf_mtry": ["all"],
            "importance_repeats": 1,
            **ensemble,
        },
        "output_dir": str(out_dir),
    })


@pytest.fixture
def synthetic_dir(tmp_path):
    data_dir = tmp_path / "data"
    assert main(["synth", "amplitude", "-n", "40", "--out", str(data_dir)]) == 0
    return data_dir


class TestSynthCommand:
    """Test the synth sub-command."""

    def test_writes_files(self, synthetic_dir):
        assert (synthetic_dir / "trajectories.csv").exists()
        assert len((synthetic_dir / "labels.csv").read_text().splitlines()) == 41

    def test_unknown_scenario(self, tmp_path):
        assert main(["synth", "spiral", "--out", str(tmp_path)]) == 5

    def test_seed_changes_output(self, tmp_path):
        main(["synth", "xor", "-n", "6", "--seed", "1", "--out", str(tmp_path / "a")])
        main(["synth", "xor", "-n", "6", "--seed", "2", "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "trajectories.csv").read_text()
        b = (tmp_path / "b" / "trajectories.csv").read_text()
        assert a != b


class TestConfigCommand:
    """Test configuration output and overrides."""

    def test_init_prints_defaults(self, capsys):
        assert main(["config", "--init"]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["seed"] == 42
        assert printed["folds"] == {"k_out": 10, "k_in": 5}

    def test_overrides(self, capsys):
        assert main(["config", "--seed", "9", "--gate", "inner", "--jobs", "3"]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["seed"] == 9
        assert printed["jobs"] == 3
        assert printed["ensemble"]["gate"] == "inner"

    def test_gate_override_enters_fingerprint(self):
        args = build_parser().parse_args(["run", "--gate", "inner"])
        assert resolve_config(args).fingerprint() != default_config().fingerprint()

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2

    def test_malformed_config_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        assert main(["config", "--config", str(path)]) == 2


class TestExitCodes:
    """Test usage and data failures."""

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 5

    def test_missing_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 5

    def test_missing_data(self, tmp_path):
        config = small_config(tmp_path / "nowhere", tmp_path / "out")
        path = tmp_path / "run.json"
        path.write_text(config.to_json())
        assert main(["preprocess", "--config", str(path)]) == 3


class TestRunCommand:
    """Test preprocess, distances and a small end-to-end run."""

    def test_preprocess(self, tmp_path, synthetic_dir):
        path = tmp_path / "run.json"
        path.write_text(small_config(synthetic_dir, tmp_path / "out").to_json())
        assert main(["preprocess", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "preprocessed.json").exists()

    def test_distances_with_csv(self, tmp_path, synthetic_dir):
        path = tmp_path / "run.json"
        path.write_text(small_config(synthetic_dir, tmp_path / "out").to_json())
        assert main(["distances", "--config", str(path), "--csv"]) == 0
        assert len(list((tmp_path / "out" / "cache").glob("*.fdcm"))) == 3
        assert (tmp_path / "out" / "distances" / "L2[a=0].csv").exists()

    def test_run_writes_report(self, tmp_path, synthetic_dir):
        out = tmp_path / "out"
        path = tmp_path / "run.json"
        path.write_text(small_config(synthetic_dir, out).to_json())
        assert main(["run", "--config", str(path), "--jobs", "2"]) == 0

        report = json.loads((out / "report.json").read_text())
        assert report["n_samples"] == 40
        assert report["classes"] == [1, 2]
        assert report["audit"]["violations"] == []
        base = report["bases"][0]
        assert base["base"] == "kNCD"
        assert [w["name"] for w in base["weak"]] == [
            "kNCD:globMax[a=0]", "kNCD:L2[a=0]", "kNCD:measure:distance",
        ]
        assert {e["name"] for e in base["ensembles"]} == {"RF-I", "LC"}
        assert (out / "weak_learners_kNCD.csv").exists()
        assert (out / "ensembles_kNCD.csv").exists()

    def test_rerun_uses_cache(self, tmp_path, synthetic_dir):
        config = small_config(synthetic_dir, tmp_path / "out")
        first = ClassificationEngine(config)
        first.preprocess()
        first.compute_distances()
        assert (first.cache.hits, first.cache.misses) == (0, 3)

        second = ClassificationEngine(config)
        second.preprocess()
        second.compute_distances()
        assert (second.cache.hits, second.cache.misses) == (3, 0)
        for label, matrix in first.matrices.items():
            assert (second.matrices[label].entries == matrix.entries).all()
