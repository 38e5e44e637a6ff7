"""Configuration validation and end-to-end pipeline tests on synthetic data."""
import json

import pytest

from riskscreen.pipeline import (
    ConfigError,
    StageError,
    load_config,
    run_pipeline,
    run_stage,
    validate_config,
)
from riskscreen.synthetic import CYCLE_SUFFIXES, synthetic_tables
from riskscreen.xport import save_xport

EXPECTED_FILES = {
    "cohort.csv",
    "cohort_provenance.json",
    "model_race_unaware.json",
    "model_race_aware.json",
    "calibration_race_unaware.csv",
    "calibration_race_aware.csv",
    "risk_distribution.csv",
    "utility_curve.csv",
    "table1.csv",
    "table1_unweighted.csv",
    "utility_report.json",
    "subgroup.csv",
    "sweep.csv",
}


def write_fixture(tmp_path, rows=120, seed=7):
    tables = synthetic_tables(rows_per_cycle=rows, seed=seed)
    by_cycle = {}
    for table in tables:
        by_cycle.setdefault(table.cycle, []).append(table)
    sources = []
    for cycle, members in sorted(by_cycle.items()):
        name = f"synthetic_{CYCLE_SUFFIXES[cycle]}.xpt"
        save_xport(members, tmp_path / name)
        sources.append({"path": name, "kind": "xport"})
    return sources


def fixture_config(tmp_path, out_name="out", **overrides):
    sources = write_fixture(tmp_path)
    data = {
        "data_sources": sources,
        "output_dir": out_name,
        "reward": 70.0,
        "capacity_fraction": 0.5,
        "calibration": {"score_range": [0.0, 0.3], "bandwidth": 0.03},
        "subgroup": {"min_weighted_n": 10.0},
        "sweep_rewards": [10.0, 70.0, 200.0],
    }
    data.update(overrides)
    return validate_config(data, base_dir=tmp_path)


class TestConfigValidation:
    def test_minimal_defaults(self, tmp_path):
        (tmp_path / "d.csv").write_text("SEQN,RIDAGEYR\n1,50\n")
        config = validate_config(
            {
                "data_sources": [
                    {"path": "d.csv", "kind": "csv", "cycle": "2011-2012"}
                ],
                "output_dir": "out",
            },
            base_dir=tmp_path,
        )
        assert config.reward.detection_reward == 70.0
        assert config.reward.dollars_per_util == 100.0
        assert 1.0 / config.reward.detection_reward == pytest.approx(1 / 70)
        assert config.cohort.age_min == 18.0
        assert config.cohort.bmi_max == 50.0
        assert [m.name for m in config.models] == ["race_unaware", "race_aware"]
        assert config.model_a == "race_aware"
        assert config.model_b == "race_unaware"
        assert config.weighted is True

    def test_low_reward_rejected(self, tmp_path):
        (tmp_path / "d.csv").write_text("SEQN\n1\n")
        with pytest.raises(ConfigError, match="reward"):
            validate_config(
                {
                    "data_sources": [
                        {"path": "d.csv", "kind": "csv", "cycle": "x"}
                    ],
                    "output_dir": "out",
                    "reward": 0.5,
                },
                base_dir=tmp_path,
            )

    def test_missing_data_sources_named(self, tmp_path):
        with pytest.raises(ConfigError, match="data_sources"):
            validate_config({"output_dir": "out"}, base_dir=tmp_path)

    def test_unknown_key_named(self, tmp_path):
        (tmp_path / "d.csv").write_text("SEQN\n1\n")
        with pytest.raises(ConfigError, match="frobnicate"):
            validate_config(
                {
                    "data_sources": [
                        {"path": "d.csv", "kind": "csv", "cycle": "x"}
                    ],
                    "output_dir": "out",
                    "frobnicate": 1,
                },
                base_dir=tmp_path,
            )

    def test_nonexistent_path_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            validate_config(
                {
                    "data_sources": [{"path": "nope.xpt", "kind": "xport"}],
                    "output_dir": "out",
                },
                base_dir=tmp_path,
            )

    def test_errors_aggregated(self, tmp_path):
        try:
            validate_config(
                {"reward": 0.5, "bogus": 1, "other": 2}, base_dir=tmp_path
            )
        except ConfigError as exc:
            assert len(exc.errors) >= 3
        else:
            pytest.fail("expected ConfigError")

    def test_yaml_text_round_trip(self, tmp_path):
        (tmp_path / "d.csv").write_text("SEQN\n1\n")
        (tmp_path / "run.yaml").write_text(
            "data_sources:\n"
            "  - path: d.csv\n"
            "    kind: csv\n"
            "    cycle: '2011-2012'\n"
            "output_dir: out\n"
            "reward: 80.0\n"
        )
        config = load_config(tmp_path / "run.yaml")
        assert config.reward.detection_reward == 80.0
        assert config.output_dir == tmp_path / "out"


class TestPipelineRun:
    def test_all_artifacts_present(self, tmp_path):
        config = fixture_config(tmp_path)
        artifacts = run_pipeline(config)
        names = set(artifacts.files)
        assert EXPECTED_FILES <= names
        manifest = json.loads(artifacts.manifest_path.read_text())
        on_disk = {
            p.name for p in config.output_dir.iterdir() if p.name != "manifest.json"
        }
        assert set(manifest["files"]) == on_disk

    def test_determinism_byte_identical_manifests(self, tmp_path):
        config_one = fixture_config(tmp_path, out_name="out1")
        config_two = fixture_config(tmp_path, out_name="out2")
        first = run_pipeline(config_one)
        second = run_pipeline(config_two)
        assert first.files == second.files
        assert (
            first.manifest_path.read_bytes() == second.manifest_path.read_bytes()
        )

    def test_occupied_output_dir_rejected(self, tmp_path):
        config = fixture_config(tmp_path)
        config.output_dir.mkdir(parents=True)
        (config.output_dir / "junk.txt").write_text("x")
        with pytest.raises(StageError, match="exclusively"):
            run_pipeline(config)

    def test_capacity_scenario_in_report(self, tmp_path):
        config = fixture_config(tmp_path)
        run_pipeline(config)
        report = json.loads((config.output_dir / "utility_report.json").read_text())
        assert "capacity_scenario" in report
        assert report["capacity_scenario"]["policy_a"]["kind"] == "capacity"
        assert "unweighted" in report

    def test_table1_schema(self, tmp_path):
        config = fixture_config(tmp_path)
        run_pipeline(config)
        lines = (config.output_dir / "table1.csv").read_text().splitlines()
        assert lines[0] == (
            "group,per_capita_gain,per_capita_gain_dollars,concordance,weighted_n"
        )
        groups = [line.split(",")[0] for line in lines[1:]]
        assert groups == ["Asian", "White", "Hispanic", "Black", "All"]

    def test_stages_run_individually(self, tmp_path):
        config = fixture_config(tmp_path)
        run_stage(config, "ingest")
        assert (config.output_dir / "cohort.csv").exists()
        run_stage(config, "fit")
        assert (config.output_dir / "model_race_aware.json").exists()
        run_stage(config, "report")
        assert (config.output_dir / "table1.csv").exists()
        run_stage(config, "sweep")
        assert (config.output_dir / "sweep.csv").exists()

    def test_csv_and_xport_sources_agree(self, tmp_path):
        tables = synthetic_tables(rows_per_cycle=80, seed=3)
        xpt_dir = tmp_path / "xpt"
        csv_dir = tmp_path / "csv"
        xpt_dir.mkdir()
        csv_dir.mkdir()
        by_cycle = {}
        for table in tables:
            by_cycle.setdefault(table.cycle, []).append(table)
        xpt_sources, csv_sources = [], []
        for cycle, members in sorted(by_cycle.items()):
            name = f"synthetic_{CYCLE_SUFFIXES[cycle]}.xpt"
            save_xport(members, xpt_dir / name)
            xpt_sources.append({"path": f"xpt/{name}", "kind": "xport"})
        for table in tables:
            frame = table.to_frame()
            frame.to_csv(csv_dir / f"{table.name.lower()}.csv", index=False)
            csv_sources.append({
                "path": f"csv/{table.name.lower()}.csv",
                "kind": "csv",
                "cycle": table.cycle,
            })
        common = {
            "reward": 70.0,
            "calibration": {"score_range": [0.0, 0.3], "bandwidth": 0.03},
            "subgroup": {"min_weighted_n": 10.0},
            "sweep_rewards": [70.0],
        }
        config_x = validate_config(
            {"data_sources": xpt_sources, "output_dir": "out_x", **common},
            base_dir=tmp_path,
        )
        config_c = validate_config(
            {"data_sources": csv_sources, "output_dir": "out_c", **common},
            base_dir=tmp_path,
        )
        art_x = run_pipeline(config_x)
        art_c = run_pipeline(config_c)
        for name in ("cohort.csv", "table1.csv", "sweep.csv", "subgroup.csv"):
            assert art_x.files[name] == art_c.files[name], name

    def test_extended_model_through_config(self, tmp_path):
        config = fixture_config(
            tmp_path,
            models=[
                {"name": "race_unaware", "terms": ["intercept", "age^2", "bmi^2"]},
                {"name": "race_aware",
                 "terms": ["intercept", "age^2", "bmi^2", "C(race, ref=White)"]},
                {"name": "extended",
                 "terms": ["intercept", "age^2", "bmi^2", "C(gender)",
                           "weight_kg", "height_cm", "waist_cm",
                           "greatest_weight_kg", "C(family_history)",
                           "C(depressed)", "income", "C(insured)",
                           "C(food_secure)"]},
            ],
        )
        artifacts = run_pipeline(config)
        assert "model_extended.json" in artifacts.files
        assert "calibration_extended.csv" in artifacts.files
        model = json.loads(
            (config.output_dir / "model_extended.json").read_text()
        )
        assert len(model["coefficients"]) == 15
        assert model["diagnostics"]["converged"]

    def test_failed_run_cleans_up(self, tmp_path):
        config = fixture_config(tmp_path)
        config.cohort = type(config.cohort)(age_min=69.5, age_max=70.0,
                                            bmi_min=49.9, bmi_max=50.0)
        with pytest.raises(StageError, match="ingest"):
            run_pipeline(config)
        leftovers = list(config.output_dir.iterdir())
        assert leftovers == []
