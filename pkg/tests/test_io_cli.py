import csv
import json
import struct

import numpy as np
import pytest

from amv3d import io
from amv3d.cli import build_config, main
from amv3d.errors import InvalidSpec, ShapeMismatch
from amv3d.synth import SyntheticSpec, make_dataset


def test_field_round_trip_and_layout(tmp_path, rng):
    a = rng.standard_normal((2, 3, 4, 8)).astype(np.float32)
    path = tmp_path / "f.amv"
    io.write_field(path, a)
    raw = path.read_bytes()
    assert raw[:4] == b"AMV1"
    assert struct.unpack("<4I", raw[4:20]) == (2, 3, 4, 8)
    # row-major little-endian float32 payload
    assert np.frombuffer(raw[20:24], "<f4")[0] == a[0, 0, 0, 0]
    assert np.frombuffer(raw[-4:], "<f4")[0] == a[-1, -1, -1, -1]
    back = io.read_field(path)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, a)


def test_field_pads_low_rank(tmp_path):
    io.write_field(tmp_path / "w.amv", np.ones((5, 4, 4)))
    assert io.read_field(tmp_path / "w.amv").shape == (5, 1, 4, 4)
    io.write_field(tmp_path / "p.amv", np.ones((4, 4)))
    assert io.read_field(tmp_path / "p.amv").shape == (1, 1, 4, 4)
    with pytest.raises(ShapeMismatch):
        io.write_field(tmp_path / "x.amv", np.ones((1, 1, 1, 1, 1)))


def test_mask_round_trip(tmp_path, rng):
    m = rng.random((3, 8, 4)) < 0.5
    io.write_mask(tmp_path / "m.amsk", m)
    raw = (tmp_path / "m.amsk").read_bytes()
    assert raw[:4] == b"AMSK" and len(raw) == 16 + m.size
    np.testing.assert_array_equal(io.read_mask(tmp_path / "m.amsk"), m)


def test_corrupt_files(tmp_path):
    (tmp_path / "bad.amv").write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(InvalidSpec):
        io.read_field(tmp_path / "bad.amv")
    io.write_field(tmp_path / "t.amv", np.ones((1, 1, 2, 2)))
    (tmp_path / "t.amv").write_bytes((tmp_path / "t.amv").read_bytes()[:-2])
    with pytest.raises(InvalidSpec):
        io.read_field(tmp_path / "t.amv")
    with pytest.raises(InvalidSpec):
        io.read_manifest(tmp_path)


def test_dataset_round_trip(tmp_path):
    ds = make_dataset(SyntheticSpec(rows=16, cols=16, seed=2, mask_style="swath"))
    io.write_dataset(tmp_path / "d", ds)
    files = io.DatasetFiles(tmp_path / "d")
    np.testing.assert_array_equal(files.grid.levels, ds.grid.levels)
    np.testing.assert_allclose(files.gamma.gamma, ds.gamma.gamma, rtol=1e-6)
    obs = files.observations()
    np.testing.assert_array_equal(obs.mask0, ds.obs.mask0)
    np.testing.assert_allclose(obs.filled(0), ds.obs.filled(0), rtol=1e-6, atol=1e-6)
    assert np.isnan(obs.y0[~np.broadcast_to(obs.mask0[:, None], obs.y0.shape)]).all()
    truth = files.truth()
    np.testing.assert_allclose(truth.d, ds.truth.d, rtol=1e-6, atol=1e-7)
    assert files.manifest["spec"]["mask_style"] == "swath"


def test_build_config():
    from amv3d.grid import PhysicsConstants
    g = PhysicsConstants(np.zeros((5, 3)))
    cfg, opts = build_config({"rho": 2.0, "mode": "split"}, g, "3d_hydro_soft")
    assert cfg.rho == 2.0 and opts.rho == 2.0 and opts.mode == "split" and opts.constraint == "soft"
    with pytest.raises(InvalidSpec):
        build_config({"learning_rate": 1}, g, "3d")


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    spec = tmp_path_factory.getbasetemp() / "spec.json"
    spec.write_text(json.dumps({"rows": 16, "cols": 16, "seed": 5}))
    assert main(["generate", "--spec", str(spec), "--out", str(out)]) == 0
    return out


def test_cli_estimate_and_evaluate(data_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_outer": 2, "inner_max_iter": 10, "rho": 3.0}))
    est = tmp_path / "est"
    code = main(["estimate", "--data", str(data_dir), "--variant", "3d-hydro-hard",
                 "--config", str(cfg), "--out", str(est)])
    assert code == 0
    assert "3d_hydro_hard: 2 outer iterations" in capsys.readouterr().out
    d, w, variant = io.read_estimate(est)
    assert d.shape == (4, 2, 16, 16) and w.shape == (5, 16, 16) and variant == "3d_hydro_hard"
    trace = list(csv.reader(open(est / "trace.csv")))
    assert len(trace) == 3
    report = tmp_path / "report.csv"
    assert main(["evaluate", "--data", str(data_dir), "--estimate", str(est), "--out", str(report)]) == 0
    rows = list(csv.reader(open(report)))
    assert rows[0] == ["variant", "layer", "epe", "vrmse"] and len(rows) == 5
    # nine significant digits
    assert all(len(r[2].replace(".", "").lstrip("0").split("e")[0]) <= 9 for r in rows[1:])


def test_cli_calibrate(data_dir, tmp_path):
    out = tmp_path / "gamma.json"
    assert main(["calibrate-gamma", "--data", str(data_dir), "--out", str(out)]) == 0
    gamma = np.array(json.loads(out.read_text())["gamma"])
    truth = io.DatasetFiles(data_dir).gamma.gamma
    # float32 storage of the images limits the round trip
    np.testing.assert_allclose(gamma[1:-1], truth[1:-1], rtol=1e-3)


def test_cli_check(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") >= 9 and "FAIL" not in out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["estimate", "--data", str(tmp_path), "--variant", "3d", "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "spec.json"
    bad.write_text(json.dumps({"rows": 24}))
    assert main(["generate", "--spec", str(bad), "--out", str(tmp_path / "g")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--data", "x", "--variant", "4d", "--out", "y"])
    assert exc.value.code == 2


def test_cli_solver_failure(data_dir, tmp_path, monkeypatch):
    from amv3d import cli
    from amv3d.errors import DivergenceDetected

    def boom(*a, **k):
        raise DivergenceDetected("objective blew up")
    monkeypatch.setattr(cli, "run_variant", boom)
    assert main(["estimate", "--data", str(data_dir), "--variant", "3d", "--out", str(tmp_path / "o")]) == 3
