import csv
import subprocess
import sys

import pytest

from perceptplan.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--mode", "coupled", "--seed", "1", "--duration", "1.0", "--out", str(out)]) == EXIT_OK
    for name in ("frames", "metrics", "histogram", "timing"):
        assert (out / f"{name}.csv").exists()
    assert (out / "replans.jsonl").read_text().strip()
    row = next(csv.DictReader(open(out / "metrics.csv")))
    assert row["mode"] == "COUPLED" and int(row["frames"]) == 31
    assert "in_fov" in capsys.readouterr().out


def test_replay_recomputes_metrics(tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", "--mode", "no-pa", "--duration", "1.0", "--out", str(out)])
    capsys.readouterr()
    assert main(["replay", str(out / "frames.csv"), "--out", str(tmp_path / "replay")]) == EXIT_OK
    a = next(csv.DictReader(open(out / "metrics.csv")))
    b = next(csv.DictReader(open(tmp_path / "replay" / "metrics.csv")))
    for k in ("frames", "in_fov_pct", "behind_pct", "collision_frames"):
        assert float(a[k]) == pytest.approx(float(b[k]))


def test_tracked_run_writes_snapshots(tmp_path):
    snaps = tmp_path / "clouds.txt"
    assert main(["run", "--duration", "0.5", "--prediction", "tracked", "--out", str(tmp_path / "r"),
                 "--snapshots", str(snaps)]) == EXIT_OK
    assert snaps.exists()


def test_compare_writes_ratio_rows(tmp_path):
    assert main(["compare", "--seeds", "0", "--duration", "0.6", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "comparison.csv")))
    assert {r["mode"] for r in rows} >= {"NO_PA", "DECOUPLED", "COUPLED", "COUPLED/NO_PA", "COUPLED/DECOUPLED"}


def test_io_error_exit_code(tmp_path):
    assert main(["run", "--duration", "0.2", "--out", "/proc/forbidden/out"]) == EXIT_IO
    assert main(["replay", str(tmp_path / "missing.csv")]) == EXIT_IO


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("warp_factor = 9\n")
    assert main(["run", "--duration", "0.2", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    cfg.write_text("n_simpson = 15\n")
    assert main(["run", "--duration", "0.2", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_usage_error_from_argparse():
    with pytest.raises(SystemExit) as e:
        main(["run", "--mode", "sideways"])
    assert e.value.code == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "perceptplan.cli", "run", "--duration", "0.2",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
