import dataclasses
import json

import numpy as np
import pytest
from click.testing import CliRunner

from tsync import engine, metrics, scenario
from tsync.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def short_lab(tmp_path, name="lab_short", duration=300.0, seed=7):
    cfg = scenario.preset("lab_16c")
    cfg = dataclasses.replace(
        cfg, name=name, duration_s=duration, seed=seed,
        visibility=(scenario.VisibilitySeg(0.0, duration, 8, 6),))
    path = tmp_path / f"{name}.json"
    scenario.save(cfg, path)
    return cfg, str(path)


class TestRun:
    def test_seeded_runs_byte_identical(self, runner, tmp_path):
        _, path = short_lab(tmp_path)
        for sub in ("a", "b"):
            res = runner.invoke(main, ["run", path, "--seed", "7",
                                       "--out", str(tmp_path / sub)])
            assert res.exit_code == 0, res.output
        a = (tmp_path / "a" / "loop_bench.csv").read_bytes()
        b = (tmp_path / "b" / "loop_bench.csv").read_bytes()
        assert a == b
        assert (tmp_path / "a" / "nmea_bench.log").read_bytes() == \
            (tmp_path / "b" / "nmea_bench.log").read_bytes()

    def test_tunnel_run_has_holdover_segment(self, runner, tmp_path):
        res = runner.invoke(main, ["run", "--preset", "tunnel_5km",
                                   "--out", str(tmp_path / "t")])
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "t" / "loop_vehicle.csv").read_text().splitlines()
        hold = [r for r in rows if ",HOLDOVER," in r]
        assert len(hold) == 315
        manifest = json.loads((tmp_path / "t" / "manifest.json").read_text())
        assert manifest["seed"] == scenario.DEFAULT_SEED
        assert "loop_vehicle.csv" in manifest["files"]

    def test_invalid_scenario_exits_2(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"name\": \"x\"}")
        res = runner.invoke(main, ["run", str(bad), "--out", str(tmp_path)])
        assert res.exit_code == 2
        assert "config error" in res.output

    def test_unparseable_json_exits_2(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        res = runner.invoke(main, ["run", str(bad), "--out", str(tmp_path)])
        assert res.exit_code == 2

    def test_nothing_to_run_exits_2(self, runner):
        assert runner.invoke(main, ["run"]).exit_code == 2

    def test_multi_scenario_out_dirs(self, runner, tmp_path):
        _, p1 = short_lab(tmp_path, "one", 120.0)
        _, p2 = short_lab(tmp_path, "two", 120.0)
        res = runner.invoke(main, ["run", p1, p2,
                                   "--out", str(tmp_path / "multi")])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "multi" / "one" / "loop_bench.csv").exists()
        assert (tmp_path / "multi" / "two" / "loop_bench.csv").exists()

    def test_parallel_jobs_match_sequential(self, runner, tmp_path):
        _, p1 = short_lab(tmp_path, "one", 120.0)
        _, p2 = short_lab(tmp_path, "two", 120.0)
        res = runner.invoke(main, ["run", p1, p2, "--jobs", "2",
                                   "--out", str(tmp_path / "par")])
        assert res.exit_code == 0, res.output
        res = runner.invoke(main, ["run", p1, p2,
                                   "--out", str(tmp_path / "seq")])
        assert res.exit_code == 0, res.output
        for sub in ("one", "two"):
            a = (tmp_path / "par" / sub / "loop_bench.csv").read_bytes()
            b = (tmp_path / "seq" / sub / "loop_bench.csv").read_bytes()
            assert a == b

    def test_tsf_traffic_writes_log(self, runner, tmp_path):
        cfg = scenario.ScenarioConfig(
            name="beacons", duration_s=120.0, seed=3,
            visibility=(scenario.VisibilitySeg(0.0, 120.0, 8, 6),),
            traffic=(scenario.TrafficSpec(
                "tsf", 10.0, {"n_nodes": 12, "spread_ppm": 100.0}),))
        path = tmp_path / "beacons.json"
        scenario.save(cfg, path)
        res = runner.invoke(main, ["run", str(path),
                                   "--out", str(tmp_path / "t")])
        assert res.exit_code == 0, res.output
        lines = (tmp_path / "t" / "tsf.csv").read_text().splitlines()
        assert lines[0] == "t_s,max_spread_us"
        assert len(lines) == 1201

    def test_manifest_files_all_exist(self, runner, tmp_path):
        res = runner.invoke(main, ["run", "--preset", "lte_ntp",
                                   "--out", str(tmp_path / "n")])
        assert res.exit_code == 0, res.output
        manifest = json.loads((tmp_path / "n" / "manifest.json").read_text())
        for name in manifest["files"]:
            assert (tmp_path / "n" / name).exists()
        assert "ntp.csv" in manifest["files"]


class TestAnalyze:
    def test_zero_log(self, runner, tmp_path):
        path = tmp_path / "loop.csv"
        rows = [engine.LOOP_HEADER] + [f"{t}.000,0,0.0,PPS,0"
                                       for t in range(1, 11)]
        path.write_text("\n".join(rows) + "\n")
        res = runner.invoke(main, ["analyze", str(path)])
        assert res.exit_code == 0
        rep = json.loads(res.output)
        assert rep["mean_ns"] == 0.0 and rep["std_ns"] == 0.0

    def test_matches_in_process_pipeline(self, runner, tmp_path):
        cfg, path = short_lab(tmp_path)
        out = tmp_path / "run"
        assert runner.invoke(main, ["run", path, "--out", str(out)]
                             ).exit_code == 0
        res = runner.invoke(main, ["analyze", str(out / "loop_bench.csv")])
        rep = json.loads(res.output)
        offs = [r.offset_ns for r in engine.run_scenario(cfg).loop_rows["bench"]]
        direct = metrics.report(offs, tau0_s=1.0)
        assert rep["mean_ns"] == direct["mean_ns"]
        assert rep["peak_to_peak_ns"] == direct["peak_to_peak_ns"]
        assert rep["adev"] == direct["adev"]

    def test_harness_box_matches_metrics(self, runner, tmp_path):
        out = tmp_path / "h"
        assert runner.invoke(main, ["run", "--preset", "harness_10pps",
                                    "--out", str(out)]).exit_code == 0
        res = runner.invoke(main, ["analyze", str(out / "harness.csv")])
        rep = json.loads(res.output)
        offsets = [int(line.split(",")[4]) for line in
                   (out / "harness.csv").read_text().splitlines()[1:]]
        box = metrics.boxplot(offsets)
        assert rep["box"]["median"] == box.median
        assert rep["box"]["q1"] == box.q1

    def test_multiple_logs_keyed_by_name(self, runner, tmp_path):
        _, path = short_lab(tmp_path)
        out = tmp_path / "run"
        runner.invoke(main, ["run", path, "--out", str(out)])
        zeros = tmp_path / "zeros.csv"
        zeros.write_text("\n".join(
            [engine.LOOP_HEADER] + [f"{t}.000,0,0.0,PPS,0"
                                    for t in range(1, 6)]) + "\n")
        res = runner.invoke(main, ["analyze", str(out / "loop_bench.csv"),
                                   str(zeros)])
        assert res.exit_code == 0
        rep = json.loads(res.output)
        assert set(rep.keys()) == {"loop_bench.csv", "zeros.csv"}
        assert rep["zeros.csv"]["mean_ns"] == 0.0

    def test_malformed_log_exits_1(self, runner, tmp_path):
        bad = tmp_path / "junk.csv"
        bad.write_text("what,is,this\n1,2,3\n")
        res = runner.invoke(main, ["analyze", str(bad)])
        assert res.exit_code == 1

    def test_csv_report_and_out_files(self, runner, tmp_path):
        cfg, path = short_lab(tmp_path)
        out = tmp_path / "run"
        runner.invoke(main, ["run", path, "--out", str(out)])
        res = runner.invoke(main, ["analyze", str(out / "loop_bench.csv"),
                                   "--report", "csv",
                                   "--out", str(tmp_path / "rep")])
        assert res.exit_code == 0
        assert "mean_ns" in res.output
        assert (tmp_path / "rep" / "loop_bench_report.json").exists()
        assert (tmp_path / "rep" / "loop_bench_adev.csv").exists()
        assert (tmp_path / "rep" / "loop_bench_offsets.csv").exists()


class TestReplay:
    def test_combined_round_trip(self, runner, tmp_path):
        cfg = scenario.preset("tunnel_5km")
        cfg = dataclasses.replace(
            cfg, name="rt", duration_s=240.0,
            visibility=(scenario.VisibilitySeg(0.0, 240.0, 8, 6),),
            temperature=scenario.ConstantTemp(25.0))
        path = tmp_path / "rt.json"
        scenario.save(cfg, path)
        out = tmp_path / "run"
        assert runner.invoke(main, ["run", str(path), "--out", str(out)]
                             ).exit_code == 0
        res = runner.invoke(main, [
            "replay", str(out / "nmea_vehicle.log"),
            "--pps", str(out / "pps_vehicle.log"),
            "--scenario", str(path), "--out", str(tmp_path / "rp")])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "rp" / "loop_replay.csv").read_bytes() == \
            (out / "loop_vehicle.csv").read_bytes()

    def test_missing_pulse_second_warns_and_coasts(self, runner, tmp_path):
        cfg, path = short_lab(tmp_path, "combined", 120.0)
        cfg = dataclasses.replace(
            cfg, nodes=(dataclasses.replace(
                cfg.nodes[0], servo=dataclasses.replace(
                    cfg.nodes[0].servo,
                    mode=scenario.ServoMode.NMEA_PLUS_PPS)),))
        scenario.save(cfg, path)
        out = tmp_path / "run"
        assert runner.invoke(main, ["run", str(path), "--out", str(out)]
                             ).exit_code == 0
        pps_lines = (out / "pps_bench.log").read_text().splitlines()
        kept = [l for l in pps_lines if abs(int(l) - 60 * 10**9) > 10**8]
        (tmp_path / "gappy.log").write_text("\n".join(kept) + "\n")
        res = runner.invoke(main, [
            "replay", str(out / "nmea_bench.log"),
            "--pps", str(tmp_path / "gappy.log"),
            "--scenario", str(path), "--out", str(tmp_path / "rp")],
            env={"TSYNC_LOG": "WARNING"})
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "rp" / "loop_replay.csv").read_text().splitlines()
        full = (out / "loop_bench.csv").read_text().splitlines()
        assert len(rows) == len(full) - 1
        assert not any(r.startswith("60.000,") for r in rows)

    def test_nmea_only_replay_millisecond_regime(self, runner, tmp_path):
        cfg, path = short_lab(tmp_path)
        out = tmp_path / "run"
        runner.invoke(main, ["run", str(path), "--out", str(out)])
        res = runner.invoke(main, ["replay", str(out / "nmea_bench.log"),
                                   "--mode", "nmea",
                                   "--out", str(tmp_path / "rp")])
        assert res.exit_code == 0, res.output
        rows = (tmp_path / "rp" / "loop_replay.csv").read_text().splitlines()[1:]
        offs = np.array([int(r.split(",")[1]) for r in rows])
        assert np.abs(offs).max() > 100_000  # ms-scale spread
        assert np.abs(offs).max() < 100_000_000

    def test_unsorted_pps_rejected(self, runner, tmp_path):
        cfg, path = short_lab(tmp_path)
        out = tmp_path / "run"
        runner.invoke(main, ["run", str(path), "--out", str(out)])
        (tmp_path / "bad.log").write_text("2000000000\n1000000000\n")
        res = runner.invoke(main, ["replay", str(out / "nmea_bench.log"),
                                   "--pps", str(tmp_path / "bad.log"),
                                   "--out", str(tmp_path / "rp")])
        assert res.exit_code == 1
        assert "not time-sorted" in res.output


class TestPresets:
    def test_list(self, runner):
        res = runner.invoke(main, ["presets"])
        assert res.exit_code == 0
        assert set(res.output.split()) == set(scenario.PRESET_NAMES)

    def test_show_round_trips(self, runner):
        res = runner.invoke(main, ["presets", "--show", "tunnel_5km"])
        assert res.exit_code == 0
        assert scenario.loads(res.output) == scenario.preset("tunnel_5km")

    def test_show_unknown(self, runner):
        assert runner.invoke(main, ["presets", "--show", "nope"]).exit_code == 2
