import json
import os
import subprocess
import sys

import numpy as np
import pytest

from tvflow import io
from tvflow.cli import main
from tvflow.spectral import decompose
from tvflow.tv1d import evolve, sample


# -- file formats ----------------------------------------------------------------------


def test_signal_csv_roundtrip_is_bit_exact(tmp_path, rng):
    f = rng.random(50) * 10 ** rng.uniform(-8, 8, 50)
    path = tmp_path / "s.csv"
    io.write_signal_csv(path, f)
    np.testing.assert_array_equal(io.read_signal_csv(path), f)


def test_signal_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1.0\n2.0\n\nfoo\n")
    with pytest.raises(io.ParseError, match=r"bad.csv:4"):
        io.read_signal_csv(p)
    p.write_text("1,2\n")
    with pytest.raises(io.ParseError, match=r":1: expected a single column"):
        io.read_signal_csv(p)
    p.write_text("nan\n")
    with pytest.raises(io.ParseError, match="non-finite"):
        io.read_signal_csv(p)
    p.write_text("\n\n")
    with pytest.raises(io.ParseError, match="no values"):
        io.read_signal_csv(p)


def test_matrix_csv(tmp_path, rng):
    m = rng.random((4, 3))
    io.write_matrix_csv(tmp_path / "m.csv", m)
    np.testing.assert_array_equal(io.read_matrix_csv(tmp_path / "m.csv"), m)
    (tmp_path / "r.csv").write_text("1,2\n3\n")
    with pytest.raises(io.ParseError, match="row 2"):
        io.read_matrix_csv(tmp_path / "r.csv")


@pytest.mark.parametrize("maxval", [255, 65535])
@pytest.mark.parametrize("plain", [False, True])
def test_pgm_roundtrip(tmp_path, rng, maxval, plain):
    q = rng.integers(0, maxval + 1, size=(5, 7))
    img = q / maxval
    path = tmp_path / "x.pgm"
    io.write_pgm(path, img, maxval=maxval, plain=plain)
    np.testing.assert_allclose(io.read_pgm(path), img, atol=1e-15)
    assert path.read_bytes()[:2] == (b"P2" if plain else b"P5")


def test_pgm_header_comments():
    data = b"P2\n# a comment\n2 1 # trailing\n10\n0 10\n"
    np.testing.assert_allclose(io.parse_pgm(data), [[0.0, 1.0]])


def test_pgm_errors_report_byte_position():
    with pytest.raises(io.ParseError, match="byte 0"):
        io.parse_pgm(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(io.ParseError, match=r"byte 13: truncated raster"):
        io.parse_pgm(b"P5\n2 2\n255\n\x00\x01")
    with pytest.raises(io.ParseError, match=r"byte 3: expected an integer"):
        io.parse_pgm(b"P2\nx 2\n255\n")
    with pytest.raises(io.ParseError, match="exceeds maxval"):
        io.parse_pgm(b"P2\n1 1\n5\n9\n")


def test_flow_and_spectral_json_roundtrip(tmp_path, rng):
    f = rng.random(20)
    fl = evolve(f)
    io.write_json(tmp_path / "f.json", io.flow_to_dict(fl))
    back = io.flow_from_dict(io.read_json(tmp_path / "f.json"))
    np.testing.assert_array_equal(back.times, fl.times)
    np.testing.assert_array_equal(sample(back, 0.0), f)
    for t in np.linspace(0, fl.extinction_time, 9):
        np.testing.assert_allclose(sample(back, t), sample(fl, t), atol=1e-13)

    spec = decompose(fl)
    d = json.loads(json.dumps(io.spectral_to_dict(spec)))
    assert set(d) == {"mean", "lambdas", "phis"}
    back = io.spectral_from_dict(d)
    np.testing.assert_array_equal(back.phis, spec.phis)


def test_atomic_write_keeps_old_file_on_failure(tmp_path, monkeypatch):
    path = tmp_path / "out.csv"
    path.write_text("old\n")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        io.write_signal_csv(path, [1.0, 2.0])
    assert path.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["out.csv"]


def test_trajectory_roundtrip(tmp_path, rng):
    imgs = rng.random((4, 3, 5)) * 2 - 0.5
    times = np.array([0.0, 0.1, 0.3, 1.0])
    io.write_trajectory(tmp_path / "traj", times, imgs, meta={"delta": 1.0})
    t2, imgs2, index = io.read_trajectory(tmp_path / "traj")
    np.testing.assert_array_equal(t2, times)
    np.testing.assert_allclose(imgs2, imgs, atol=2.0 / 65535)
    assert index["delta"] == 1.0 and len(index["frames"]) == 4


# -- command line ----------------------------------------------------------------------


@pytest.fixture
def three(tmp_path):
    p = tmp_path / "in.csv"
    p.write_text("0\n2\n1\n")
    return p


def test_cli_flow_and_spectrum(tmp_path, three, capsys):
    out = tmp_path / "flow.json"
    assert main(["flow", str(three), "--out", str(out), "-q"]) == 0
    d = json.loads(out.read_text())
    np.testing.assert_allclose(d["times"], [1 / 3, 1], atol=1e-12)
    assert set(d) == {"times", "subgradients", "initial"}

    spec_csv = tmp_path / "spec.csv"
    assert main(["spectrum", str(out), "--out", str(spec_csv), "--json", str(tmp_path / "s.json"), "-q"]) == 0
    rows = np.loadtxt(spec_csv, delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 0], [1 / 3, 1], atol=1e-12)
    assert spec_csv.read_text().splitlines()[0] == "t,mass"


def test_cli_flow_verify(tmp_path, three, capsys):
    out = tmp_path / "flow.json"
    assert main(["flow", str(three), "--out", str(out), "--verify", "--dt", "1e-3"]) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["discrepancy"] <= 1e-3
    assert main(["flow", str(three), "--out", str(out), "--verify", "--dt", "0.2", "--verify-tol", "1e-12"]) == 2


def test_cli_flow_json_reproduces_input(tmp_path, rng):
    f = rng.random(30)
    src = tmp_path / "f.csv"
    io.write_signal_csv(src, f)
    assert main(["flow", str(src), "--out", str(tmp_path / "fl.json"), "-q"]) == 0
    fl = io.flow_from_dict(io.read_json(tmp_path / "fl.json"))
    io.write_signal_csv(tmp_path / "back.csv", sample(fl, 0.0))
    assert (tmp_path / "back.csv").read_text() == src.read_text()


def test_cli_filter(tmp_path, three):
    out = tmp_path / "band.csv"
    assert main(["filter", str(three), "--band", "0:0.5", "--out", str(out), "-q"]) == 0
    np.testing.assert_allclose(io.read_signal_csv(out), [0, 0.5, -0.5], atol=1e-12)
    assert main(["filter", str(three), "--band", "0:50", "--band", "50:100", "--percent", "--out", str(out), "-q"]) == 0
    m = io.read_matrix_csv(out)
    assert m.shape == (3, 2)
    np.testing.assert_allclose(m.sum(axis=1), [-1, 1, 0], atol=1e-12)
    assert main(["filter", str(three), "--band", "0:inf", "--include-mean", "--out", str(out), "-q"]) == 0
    np.testing.assert_allclose(io.read_signal_csv(out), [0, 2, 1], atol=1e-12)


def test_cli_rdmd_and_kmd(tmp_path, three):
    out = tmp_path / "r.json"
    assert main(["rdmd", str(three), "--out", str(out), "-q"]) == 0
    d = json.loads(out.read_text())
    seg = d["segments"][0]
    assert {"tau_lo", "tau_hi", "xi1", "xi2", "eigenvalues", "coefficients"} <= set(seg)
    assert d["segments"][-1]["tau_hi"] is None
    assert main(["rdmd", str(three), "--dt", "5", "--out", str(out), "-q"]) == 1

    out = tmp_path / "k.json"
    assert main(["kmd", str(three), "--exact-rates", "--out", str(out), "-q"]) == 0
    d = json.loads(out.read_text())
    assert set(d) == {"lambdas", "modes", "residual"}
    assert d["residual"] <= 1e-8
    assert main(["kmd", str(three), "--sparsity", "4", "--n-rates", "50", "--out", str(out), "-q"]) == 0
    assert len(json.loads(out.read_text())["lambdas"]) <= 4


def test_cli_flow2d_and_bands(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["flow2d", "--random", "6x5", "--seed", "7", "--out", str(d), "-q"]) == 0
    assert (a / "index.json").read_text() == (b / "index.json").read_text()
    assert (a / "frame_00003.pgm").read_bytes() == (b / "frame_00003.pgm").read_bytes()
    bands = tmp_path / "bands"
    assert main(["bands2d", str(a), "--band", "0:20", "--band", "20:100", "--percent", "--out", str(bands), "-q"]) == 0
    idx = json.loads((bands / "bands.json").read_text())
    assert [x["file"] for x in idx["bands"]] == ["band_00.csv", "band_01.csv"]
    assert io.read_matrix_csv(bands / "band_00.csv").shape == (6, 5)

    pgm = tmp_path / "img.pgm"
    io.write_pgm(pgm, np.random.default_rng(1).random((4, 4)))
    assert main(["flow2d", str(pgm), "--delta", "1.5", "--out", str(tmp_path / "c"), "-q"]) == 0
    # not converged within the step budget counts as a numerical failure
    assert main(["flow2d", str(pgm), "--max-steps", "1", "--out", str(tmp_path / "d"), "-q"]) == 2


def test_cli_bench(tmp_path):
    out = tmp_path / "bench.json"
    args = ["bench", "--random", "64", "--seed", "3", "--repeats", "1", "--baseline-repeats", "1", "--out", str(out), "-q"]
    assert main(args) == 0
    d = json.loads(out.read_text())
    assert {"speedup", "fast_seconds", "baseline_seconds", "discrepancy", "host"} <= set(d)
    assert d["length"] == 64


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["nope"],
        ["flow", "x.csv"],
        ["filter", "x.csv", "--band", "2:1", "--out", "o"],
        ["filter", "x.csv", "--band", "abc", "--out", "o"],
        ["flow2d", "--random", "4x4", "--delta", "2", "--out", "o"],
        ["kmd", "x.csv", "--sparsity", "0", "--out", "o"],
        ["flow", "x.csv", "--tol", "-1", "--out", "o"],
    ],
)
def test_cli_usage_errors(argv, capsys):
    assert main(argv) == 1


def test_cli_parse_error_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("1\n2\nx\n")
    assert main(["flow", str(p), "--out", str(tmp_path / "o.json")]) == 1
    assert "bad.csv:3" in capsys.readouterr().err
    assert not (tmp_path / "o.json").exists()


def test_cli_missing_file(tmp_path):
    assert main(["flow", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o.json")]) == 1


def test_module_entry_point(tmp_path, three):
    out = tmp_path / "f.json"
    res = subprocess.run([sys.executable, "-m", "tvflow", "flow", str(three), "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert out.exists()
