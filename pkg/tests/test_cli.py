import json
import subprocess
import sys

import numpy as np
import pytest

from latentcodec.cli import COMMANDS, RunConfig, UsageError, build_parser, run
from latentcodec.motion import MotionField
from latentcodec.synthetic import random_feature_map, random_point_cloud, textured_frame
from latentcodec.tensorio import read_curve, read_tensor, write_curve, write_tensor


def call(tmp_path, *argv):
    report = tmp_path / "report.json"
    code = run([*argv, "--report", str(report)])
    return code, (json.loads(report.read_text()) if code == 0 else None)


def config(tmp_path, **doc):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_every_subcommand_has_help():
    names = {"histogram", "fit-bottleneck", "encode", "decode", "analyze-gap", "gmm-side", "critical-points",
             "pareto", "bd-rate", "motion-estimate", "motion-predict", "nrmse-sweep"}
    build_parser()
    assert set(COMMANDS) == names
    for name in names:
        assert COMMANDS[name].format_help()


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["histogram"])
    assert exc.value.code == 2


def test_unknown_config_key(tmp_path, capsys):
    code, _ = call(tmp_path, "bd-rate", "--anchor", "a", "--test", "b", "--config", config(tmp_path, bogus=1))
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_seed_required(tmp_path, capsys):
    code, _ = call(tmp_path, "analyze-gap", "--synthetic")
    assert code == 2
    assert "seed" in capsys.readouterr().err


def test_data_error_exit_1_names_file(tmp_path, capsys):
    bad = tmp_path / "bad.lct"
    bad.write_bytes(b"junk")
    code, _ = call(tmp_path, "histogram", "--input", str(bad), "--out", str(tmp_path / "h.lct"))
    assert code == 1
    err = capsys.readouterr().err
    assert "bad.lct" in err and len(err.strip().splitlines()) == 1


def test_encode_decode_round_trip(tmp_path, rng):
    t = rng.integers(-5, 6, size=(3, 4, 5)).astype(np.float32)
    write_tensor(t, tmp_path / "x.lct")
    code, rep = call(tmp_path, "encode", "--input", str(tmp_path / "x.lct"), "--out", str(tmp_path / "x.lcr"))
    assert code == 0 and rep["count"] == 60
    code, _ = call(tmp_path, "decode", "--input", str(tmp_path / "x.lcr"), "--out", str(tmp_path / "y.lct"),
                   "--shape", "3,4,5")
    assert code == 0
    assert (tmp_path / "x.lct").read_bytes() == (tmp_path / "y.lct").read_bytes()


def test_encode_is_deterministic(tmp_path, rng):
    write_tensor(rng.integers(-5, 6, size=100).astype(np.float32), tmp_path / "x.lct")
    run(["encode", "--input", str(tmp_path / "x.lct"), "--out", str(tmp_path / "a.lcr"), "--report", "-"])
    run(["encode", "--input", str(tmp_path / "x.lct"), "--out", str(tmp_path / "b.lcr"), "--report", "-"])
    assert (tmp_path / "a.lcr").read_bytes() == (tmp_path / "b.lcr").read_bytes()


def test_histogram_with_jacobian(tmp_path, rng):
    write_tensor(rng.uniform(-3, 3, size=(2, 50)).astype(np.float32), tmp_path / "x.lct")
    code, rep = call(tmp_path, "histogram", "--input", str(tmp_path / "x.lct"), "--out", str(tmp_path / "h.lct"),
                     "--jacobian", str(tmp_path / "j.lct"), "--channel", "1",
                     "--config", config(tmp_path, support={"y_min": -4, "B": 9}))
    assert code == 0 and rep["B"] == 9 and rep["n"] == 50
    assert read_tensor(tmp_path / "j.lct").shape == (9, 50)


def test_fit_bottleneck(tmp_path, rng):
    write_tensor(np.round(rng.normal(0, 2, 300)).astype(np.float32), tmp_path / "x.lct")
    code, rep = call(tmp_path, "fit-bottleneck", "--input", str(tmp_path / "x.lct"), "--out",
                     str(tmp_path / "m.json"), "--seed", "0", "--steps", "200")
    assert code == 0 and rep["bits_per_sample"] > 0
    assert json.loads((tmp_path / "m.json").read_text())


def test_bd_rate_identity(tmp_path, capsys):
    write_curve([1, 2, 4, 8], [30, 33, 35, 36], tmp_path / "a.csv")
    code = run(["bd-rate", "--anchor", str(tmp_path / "a.csv"), "--test", str(tmp_path / "a.csv")])
    assert code == 0
    assert json.loads(capsys.readouterr().out) == {"mode": "rate", "value": 0.0}


def test_pareto(tmp_path):
    (tmp_path / "p.csv").write_text("rate,quality\n10,50\n20,60\n15,40\n")
    code, rep = call(tmp_path, "pareto", "--input", str(tmp_path / "p.csv"), "--out", str(tmp_path / "f.csv"))
    assert code == 0 and rep["front_size"] == 2
    r, q = read_curve(tmp_path / "f.csv")
    assert r.tolist() == [10, 20] and q.tolist() == [50, 60]


def test_analyze_gap_synthetic(tmp_path):
    cfg = config(tmp_path, seed=0, dims=[512, 512], s=16, trained_dims=[256, 256], target_dims=[512, 512],
                 synthetic={"n_inputs": 6, "n_channels": 2})
    code, rep = call(tmp_path, "analyze-gap", "--synthetic", "--config", cfg, "--curve", str(tmp_path / "c.csv"))
    assert code == 0
    assert rep["gap"]["delta_r_max_bpp"] > 0
    assert rep["lambda_q"] == 0.25
    assert read_curve(tmp_path / "c.csv")[0].size == 3


def test_analyze_gap_directory(tmp_path, rng):
    d = tmp_path / "lat"
    d.mkdir()
    for i in range(3):
        write_tensor(np.round(rng.laplace(0, 1 + 3 * i, (2, 16, 16))).astype(np.float32), d / f"{i}.lct")
    code, rep = call(tmp_path, "analyze-gap", "--inputs", str(d), "--config", config(tmp_path, s=16))
    assert code == 0 and rep["dims"] == [256, 256]


def test_gmm_side(tmp_path, rng):
    write_tensor(np.round(rng.laplace(0, 2, (16, 64))).astype(np.float32), tmp_path / "x.lct")
    code, rep = call(tmp_path, "gmm-side", "--input", str(tmp_path / "x.lct"), "--K", "1",
                     "--out", str(tmp_path / "s.bin"))
    assert code == 0 and rep["side_bits"] == 256
    assert len((tmp_path / "s.bin").read_bytes()) == 32


def test_critical_points(tmp_path):
    pts = random_point_cloud(64, 1)
    write_tensor(random_feature_map(pts, 8, 1), tmp_path / "f.lct")
    write_tensor(pts.T, tmp_path / "p.lct")
    code, rep = call(tmp_path, "critical-points", "--features", str(tmp_path / "f.lct"), "--points",
                     str(tmp_path / "p.lct"), "--layout", "NxP", "--out", str(tmp_path / "c.lct"))
    assert code == 0
    assert read_tensor(tmp_path / "c.lct").shape == (rep["size"], 3)


def test_motion_estimate_and_predict(tmp_path):
    ref = textured_frame((32, 32), 0)
    tgt = textured_frame((32, 32), 0, MotionField.constant((32, 32), 2, 0).vectors)
    write_tensor(ref, tmp_path / "r.lct")
    write_tensor(tgt, tmp_path / "t.lct")
    code, rep = call(tmp_path, "motion-estimate", "--ref", str(tmp_path / "r.lct"), "--tgt", str(tmp_path / "t.lct"),
                     "--out", str(tmp_path / "v.lct"), "--mask-out", str(tmp_path / "m.lct"),
                     "--block", "5", "--range", "3")
    assert code == 0 and rep["mean_vector"] == [2.0, 0.0]
    code, rep = call(tmp_path, "motion-predict", "--ref", str(tmp_path / "r.lct"), "--field", str(tmp_path / "v.lct"),
                     "--mask", str(tmp_path / "m.lct"), "--out", str(tmp_path / "p.lct"),
                     "--actual", str(tmp_path / "t.lct"))
    assert code == 0 and rep["nrmse"] < 1e-6


def test_nrmse_sweep(tmp_path):
    cfg = config(tmp_path, seed=0, frame_dims=[64, 64], sweep={"param": "rot", "values": [0, 5]})
    code, rep = call(tmp_path, "nrmse-sweep", "--config", cfg, "--out", str(tmp_path / "s.csv"))
    assert code == 0 and rep["nrmse"][0] < 1e-9
    code, rep = call(tmp_path, "nrmse-sweep", "--seed", "1", "--n-draws", "3",
                     "--config", config(tmp_path, frame_dims=[64, 64]))
    assert code == 0 and rep["n_draws"] == 3


def test_run_config_rejects_unknown():
    with pytest.raises(UsageError, match="nope"):
        RunConfig.from_dict({"nope": 1})


def test_module_entry_point(tmp_path):
    write_curve([1, 2], [3, 4], tmp_path / "a.csv")
    out = subprocess.run([sys.executable, "-m", "latentcodec.cli", "bd-rate", "--anchor", str(tmp_path / "a.csv"),
                          "--test", str(tmp_path / "a.csv")], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["value"] == 0.0
