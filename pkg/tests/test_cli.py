import csv
import json
import subprocess
import sys

import pytest

from stefan_pinn.cli import main
from stefan_pinn.trainer import TrainReport


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"hidden": [8, 8], "batch_size": 16, "iterations": 10,
                             "record_every": 5}))
    return p


def test_run_writes_outputs(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    code = main(["run", "--problem", "1d2p:inv2k", "--data", "20", "--noise", "0.01",
                 "--config", str(small_config), "--out", str(out)])
    assert code == 0
    for name in ("report.json", "error_grid.csv", "boundary.csv", "model.bin", "data.csv"):
        assert (out / name).exists(), name
    text = capsys.readouterr().out
    assert "rel_l2_u" in text and "k1" in text
    rep = TrainReport.read_json(out / "report.json")
    assert rep.config["iterations"] == 10 and rep.config["adaptive_weights"]


def test_flags_override_config_file(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run", "--problem", "1d1p:direct", "--iterations", "3",
                 "--config", str(small_config), "--out", str(out)]) == 0
    rep = TrainReport.read_json(out / "report.json")
    assert rep.config["iterations"] == 3 and rep.config["hidden"] == [8, 8]
    assert not (out / "data.csv").exists()


@pytest.mark.parametrize("argv", [
    ["run", "--problem", "1d1p:inv2"],                       # missing --data
    ["run", "--problem", "9d9p:direct"],                     # unknown problem
    ["run", "--problem", "1d1p:direct", "--data", "10"],     # data on a direct problem
    ["run", "--problem", "1d1p:direct", "--adaptive"],       # adaptive without data
    ["sweep", "--problem", "1d1p:direct", "--data-list", "10", "--noise-list", "0"],
])
def test_usage_errors_exit_2(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "o")]) == 2


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--problem", "1d1p:inv2", "--data-list", "a,b", "--noise-list", "0",
              "--out", str(tmp_path)])
    assert info.value.code == 2


def test_bad_config_file_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"iterations": 5, "warmup": 3}')
    assert main(["run", "--problem", "1d1p:direct", "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == 2


def test_sweep_table_shape_and_single_cell_matches_run(tmp_path, small_config, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", "--problem", "1d1p:inv2", "--data-list", "5,10",
                 "--noise-list", "0,0.05", "--config", str(small_config), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "sweep_u.csv")))
    assert rows[0] == ["M", "sigma", "rel_l2"] and len(rows) == 5
    wide = list(csv.reader(open(out / "sweep_s_table.csv")))
    assert len(wide) == 3 and len(wide[0]) == 3
    assert (out / "M10_sigma0.05_seed0" / "report.json").exists()

    run = tmp_path / "run"
    assert main(["run", "--problem", "1d1p:inv2", "--data", "10", "--noise", "0.05",
                 "--config", str(small_config), "--out", str(run)]) == 0
    a = TrainReport.read_json(run / "report.json").final["rel_l2_u"]
    b = dict(((r[0], r[1]), float(r[2])) for r in rows[1:])[("10", "0.05")]
    assert a == b


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "stefan_pinn", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "sweep" in r.stdout
