import numpy as np
import pytest

from qstrip.cli import main
from qstrip.tbc import load_kernels

SMALL = """
[domain]
X = 2.0
Y = 1.4
X0 = 1.5
strip = semi-infinite

[mesh]
J = 48
K = 8
M = 16
T = 0.004

[packet]
k = 20.0
alpha = 0.01
x0 = 0.7
y0 = 0.7

[output]
snapshots = 8,16
format = both
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_missing_config_exits_2(capsys):
    rc = main(["run", "--config", "/no/such/file.cfg"])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[mesh]\nJJ = 3\n")
    rc = main(["run", "--config", str(p)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "unknown key mesh.JJ" in err and ":2:" in err


def test_run_writes_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "results"
    rc = main(["run", "--config", str(cfg_file), "--output-dir", str(out)])
    assert rc == 0
    assert (out / "snapshot_m000016.csv").exists()
    assert (out / "snapshot_m000016.qstr").exists()
    assert (out / "trace.csv").exists()
    assert "final mass" in capsys.readouterr().out


def test_run_with_override(cfg_file, tmp_path):
    out = tmp_path / "o2"
    rc = main([
        "run", "--config", str(cfg_file), "--output-dir", str(out),
        "--set", "mesh.M=8", "--set", "output.snapshots=4,8",
    ])
    assert rc == 0
    assert (out / "snapshot_m000008.csv").exists()


def test_converge_prints_table(cfg_file, tmp_path, capsys):
    rep = tmp_path / "rep.csv"
    rc = main([
        "converge", "--config", str(cfg_file), "--axis", "M",
        "--levels", "8,16,32", "--n-compare", "4", "--out", str(rep),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "E_C" in out and "R_time" in out
    assert rep.exists()


def test_kernels_dump(cfg_file, tmp_path, capsys):
    out = tmp_path / "k.bin"
    csvp = tmp_path / "k.csv"
    rc = main([
        "kernels", "--config", str(cfg_file), "--out", str(out),
        "--csv", str(csvp),
    ])
    assert rc == 0
    R, params = load_kernels(out)
    assert R.shape == (7, 17)
    assert np.all(np.isfinite(R))
    assert csvp.read_text().startswith("mode,m,re,im")


def test_verify_passes_on_small_config(cfg_file, capsys):
    rc = main(["verify", "--config", str(cfg_file), "--trials", "10"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("PASS") == 4
    assert "FAIL" not in out


def test_verify_default_shipped_config():
    rc = main(["verify", "--config", "configs/default.cfg", "--trials", "5",
               "--set", "mesh.J=120", "--set", "mesh.M=60"])
    assert rc == 0
