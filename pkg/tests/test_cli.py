"""CLI behavior, exercised through main() in-process."""

import json
import shutil

import pytest

from shuttlelab.cli import main

SCENARIO_YAML = """\
duration_s: 60
rng_seed: 5
pedestrians:
  crossing: {rate_per_s: 0.05}
  stops: {rate_per_s: 0.05}
trips:
  sequence: [outbound]
"""


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    scenario = base / "scenario.yaml"
    scenario.write_text(SCENARIO_YAML)
    out = base / "dataset"
    assert main(["sim", "run", "--scenario", str(scenario),
                 "--out", str(out)]) == 0
    return scenario, out


class TestSimRun:
    def test_summary_and_dataset_layout(self, demo, capsys):
        scenario, out = demo
        assert (out / "world_trace.csv").exists()
        assert (out / "1970-01-01" / "trip_0" / "shuttle" / "pose.csv") \
            .exists()

    def test_seed_flag_changes_the_run(self, demo, tmp_path, capsys):
        scenario, _ = demo
        traces = []
        for seed in (1, 2):
            out = tmp_path / f"seed{seed}"
            assert main(["sim", "run", "--scenario", str(scenario),
                         "--seed", str(seed), "--out", str(out)]) == 0
            assert f"seed {seed}" in capsys.readouterr().out
            traces.append((out / "world_trace.csv").read_bytes())
        assert traces[0] != traces[1]

    def test_bad_scenario_key_exits_2(self, tmp_path, capsys):
        scenario = tmp_path / "bad.yaml"
        scenario.write_text("durations_s: 60\n")
        rc = main(["sim", "run", "--scenario", str(scenario),
                   "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "unknown key" in capsys.readouterr().err


class TestDataset:
    def test_validate_clean_dataset(self, demo, capsys):
        _, out = demo
        assert main(["dataset", "validate", str(out)]) == 0
        assert capsys.readouterr().out.strip() == "OK"

    def test_validate_reports_missing_file(self, demo, tmp_path, capsys):
        _, out = demo
        broken = tmp_path / "broken"
        shutil.copytree(out, broken)
        (broken / "1970-01-01" / "trip_0" / "shuttle" / "pose.csv").unlink()
        assert main(["dataset", "validate", str(broken)]) == 1
        assert "pose.csv" in capsys.readouterr().out

    def test_info_prints_summary_json(self, demo, capsys):
        _, out = demo
        assert main(["dataset", "info", str(out)]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["trips"] == 1
        assert info["per_trip"][0]["direction"] == "outbound"

    def test_missing_directory_exits_2(self, tmp_path, capsys):
        rc = main(["dataset", "info", str(tmp_path / "nope")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestAnalyze:
    def test_loss_csv(self, demo, capsys):
        _, out = demo
        assert main(["analyze", "loss", str(out), "--csv"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "date,trip,method,sent,received,loss_pct"
        assert len(lines) == 2

    def test_loss_json_default(self, demo, capsys):
        _, out = demo
        assert main(["analyze", "loss", str(out)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert 0.0 <= report["loss_pct"] <= 100.0
        assert report["trips"][0]["method"] == "sequence"

    def test_loss_heatmap_csv(self, demo, capsys):
        _, out = demo
        assert main(["analyze", "loss", str(out), "--csv",
                     "--heatmap"]) == 0
        assert capsys.readouterr().out.startswith(
            "x_m,y_m,sent,lost,loss_pct")

    def test_travel_csv(self, demo, capsys):
        _, out = demo
        assert main(["analyze", "travel", str(out), "--csv"]) == 0
        header = capsys.readouterr().out.split("\n")[0]
        assert header.startswith("direction,mode,n,mean_s")

    def test_compliance_json(self, demo, capsys):
        _, out = demo
        assert main(["analyze", "compliance", str(out)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert {"incident_count", "rate_pct",
                "max_delay_s"} <= set(report)

    def test_red_fraction_json(self, demo, capsys):
        _, out = demo
        assert main(["analyze", "red-fraction", str(out)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert 0.0 <= report["fraction_immediate_cross"] <= 1.0

    def test_unknown_kind_is_a_usage_error(self, demo):
        _, out = demo
        with pytest.raises(SystemExit) as excinfo:
            main(["analyze", "latency", str(out)])
        assert excinfo.value.code == 2

    def test_json_and_csv_are_mutually_exclusive(self, demo):
        _, out = demo
        with pytest.raises(SystemExit) as excinfo:
            main(["analyze", "loss", str(out), "--json", "--csv"])
        assert excinfo.value.code == 2
