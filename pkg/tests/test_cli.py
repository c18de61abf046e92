import pytest

from app.cli import main
from app.cli.commands import DET_FILE, GT_FILE, MANIFEST_FILE

CLEAN_CROSSING = """\
n_targets = 1
frames = 120
seed = 3
crossing = true
size_min = 20
size_max = 30
speed_min = 2
speed_max = 4
p_miss = 0
p_miss_local = 0
loc_noise_std = 0
size_noise_std = 0
fp_rate = 0
"""


@pytest.fixture
def scenario_dir(tmp_path):
    config = tmp_path / "clean.cfg"
    config.write_text(CLEAN_CROSSING)
    out = tmp_path / "scenario"
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
    return config, out


def _report(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def test_simulate_writes_sequence(tmp_path, capsys):
    config = tmp_path / "clean.cfg"
    config.write_text(CLEAN_CROSSING)
    out = tmp_path / "scenario"
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == 0
    assert "frames=120 targets=1 gt_boxes=120 detections=120" in capsys.readouterr().out
    assert len((out / GT_FILE).read_text().splitlines()) == 120
    assert (out / MANIFEST_FILE).read_text().startswith("# SkyTrack run configuration")


def test_track_and_eval_clean_sequence(scenario_dir, tmp_path, capsys):
    config, out = scenario_dir
    res = tmp_path / "res.txt"
    assert main(["track", "--config", str(config), "--det", str(out), "--out", str(res), "--no-ld"]) == 0
    assert "frames=120 local_frames=0" in capsys.readouterr().out

    assert main(["eval", "--gt", str(out / GT_FILE), "--res", str(res)]) == 0
    report = _report(capsys.readouterr().out)
    assert report["mota"] == "100.0000"
    assert report["idsw"] == "0"
    assert report["idf1"] == "100.0000"
    assert report["fn"] == "0"


def test_track_with_local_detection(scenario_dir, tmp_path, capsys):
    config, out = scenario_dir
    res = tmp_path / "res.txt"
    assert main(["track", "--config", str(config), "--det", str(out), "--out", str(res)]) == 0
    assert "local_frames=90" in capsys.readouterr().out


def test_repeated_runs_are_byte_identical(scenario_dir, tmp_path):
    config, out = scenario_dir
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    for res in (first, second):
        assert main(["track", "--config", str(config), "--det", str(out), "--out", str(res)]) == 0
    assert first.read_bytes() == second.read_bytes()

    again = tmp_path / "again"
    assert main(["simulate", "--config", str(config), "--out", str(again)]) == 0
    assert (again / DET_FILE).read_bytes() == (out / DET_FILE).read_bytes()


def test_invalid_config_exits_2(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("t_hh = 0.5\n")
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "x")]) == 2
    assert "Unknown configuration key" in capsys.readouterr().err


def test_unknown_log_level_exits_2(tmp_path):
    assert main(["--log-level", "chatty", "stff-check"]) == 2


def test_missing_input_exits_3(tmp_path):
    assert main(["eval", "--gt", str(tmp_path / "gt.txt"), "--res", str(tmp_path / "res.txt")]) == 3


def test_local_detection_without_ground_truth_exits_3(scenario_dir, tmp_path):
    config, out = scenario_dir
    (out / GT_FILE).unlink()
    assert main(["track", "--config", str(config), "--det", str(out), "--out", str(tmp_path / "r.txt")]) == 3


def test_conflicting_flags_exit_4(scenario_dir, tmp_path):
    config, out = scenario_dir
    args = ["track", "--config", str(config), "--det", str(out)]
    assert main(args + ["--out", str(tmp_path / "r.txt"), "--baseline", "--no-pmr"]) == 4
    assert main(args + ["--out", str(out / DET_FILE)]) == 4


def test_malformed_detections_exit_4(tmp_path):
    det_dir = tmp_path / "seq"
    det_dir.mkdir()
    (det_dir / DET_FILE).write_text("1,-1,0,0,10\n")
    assert main(["track", "--det", str(det_dir), "--out", str(tmp_path / "r.txt"), "--no-ld"]) == 4


def test_argument_errors_exit_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["track"])
    assert excinfo.value.code == 2


def test_stff_check(tmp_path, capsys):
    params = tmp_path / "params.txt"
    assert main(["stff-check", "--seed", "0", "--dump-params", str(params)]) == 0
    assert "8/8 checks passed" in capsys.readouterr().out
    assert params.read_text().startswith("alpha = ")
