"""Command-line interface tests."""
import json

from riskscreen.cli import main


def test_fixture_then_full_run(tmp_path, capsys):
    fixture_dir = tmp_path / "demo"
    assert main(["fixture", "--output", str(fixture_dir), "--rows", "80"]) == 0
    config = fixture_dir / "synthetic.yaml"
    assert config.exists()
    assert main(["all", "--config", str(config)]) == 0
    out = capsys.readouterr().out
    assert "manifest" in out
    manifest = json.loads((fixture_dir / "out" / "manifest.json").read_text())
    assert "table1.csv" in manifest["files"]


def test_fixture_csv_format(tmp_path):
    fixture_dir = tmp_path / "demo_csv"
    assert main([
        "fixture", "--output", str(fixture_dir), "--rows", "60",
        "--format", "csv",
    ]) == 0
    assert (fixture_dir / "demo_g.csv").exists()
    assert main(["all", "--config", str(fixture_dir / "synthetic.yaml")]) == 0


def test_stage_commands(tmp_path):
    fixture_dir = tmp_path / "demo"
    main(["fixture", "--output", str(fixture_dir), "--rows", "80"])
    config = str(fixture_dir / "synthetic.yaml")
    assert main(["ingest", "--config", config]) == 0
    assert (fixture_dir / "out" / "cohort.csv").exists()
    assert main(["fit", "--config", config]) == 0
    assert (fixture_dir / "out" / "model_race_aware.json").exists()
    assert main(["report", "--config", config]) == 0
    assert (fixture_dir / "out" / "utility_report.json").exists()
    assert main(["sweep", "--config", config]) == 0
    assert (fixture_dir / "out" / "sweep.csv").exists()


def test_output_override(tmp_path):
    fixture_dir = tmp_path / "demo"
    main(["fixture", "--output", str(fixture_dir), "--rows", "80"])
    other = tmp_path / "elsewhere"
    assert main([
        "all", "--config", str(fixture_dir / "synthetic.yaml"),
        "--output", str(other),
    ]) == 0
    assert (other / "manifest.json").exists()


def test_unweighted_flag_changes_estimates(tmp_path):
    fixture_dir = tmp_path / "demo"
    main(["fixture", "--output", str(fixture_dir), "--rows", "100"])
    config = str(fixture_dir / "synthetic.yaml")
    main(["all", "--config", config, "--output", str(tmp_path / "w")])
    main(["all", "--config", config, "--unweighted",
          "--output", str(tmp_path / "u")])
    weighted = (tmp_path / "w" / "table1.csv").read_text()
    unweighted = (tmp_path / "u" / "table1.csv").read_text()
    assert weighted != unweighted


def test_bad_config_reports_errors(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("output_dir: out\nreward: 0.5\n")
    assert main(["all", "--config", str(config)]) == 2
    err = capsys.readouterr().err
    assert "data_sources" in err
    assert "reward" in err


def test_occupied_output_fails_cleanly(tmp_path, capsys):
    fixture_dir = tmp_path / "demo"
    main(["fixture", "--output", str(fixture_dir), "--rows", "80"])
    config = str(fixture_dir / "synthetic.yaml")
    out = tmp_path / "occupied"
    out.mkdir()
    (out / "junk").write_text("x")
    assert main(["all", "--config", config, "--output", str(out)]) == 1
    assert "exclusively" in capsys.readouterr().err
