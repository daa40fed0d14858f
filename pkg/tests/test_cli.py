import contextlib
import io
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from offres import __version__
from offres.cli import main
from offres.io import cfl_read, read_kspace, read_trajectory, read_volume

SMALL = {
    "seed": 3,
    "grid_size": 16,
    "trajectory": {"n_cones": 8, "interleaves_per_cone": 8, "samples_per_interleaf": 32,
                   "dcf_iterations": 2},
    "autofocus": {"n_freqs": 9},
    "network": {"n_res_blocks": 1, "channels": 4, "kernel": 3, "patch": 8, "patch_stride": 8},
    "corpus": {"n_phantoms": 3, "scale_factors": [1.0, 2.0], "freqs_hz": [0.0, 250.0],
               "train_fraction": 0.67},
    "train": {"epochs": 1, "val_fraction": 0.0},
    "eval": {"freqs_hz": [-250.0, 0.0, 250.0], "iterate_n": 2},
}


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    lines = out.getvalue().strip().splitlines()
    return code, (json.loads(lines[-1]) if lines else None), err.getvalue().strip()


def ok(argv):
    code, res, err = run(argv)
    assert code == 0, err
    return res


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    return d, ["--config", cfg]


@pytest.fixture(scope="module")
def pipeline(ws):
    d, c = ws
    ok(c + ["traj", "gen", "--out", d / "t"])
    ok(c + ["phantom", "gen", "--out", d / "ph", "--masks"])
    ok(c + ["fieldmap", "gen", "--out", d / "fm", "--f-max", 150])
    ok(c + ["sim", "fast", "--image", d / "ph", "--traj", d / "t", "--out", d / "k",
            "--fieldmap", d / "fm"])
    ok(c + ["sim", "exact", "--image", d / "ph", "--traj", d / "t", "--out", d / "k0"])
    ok(c + ["recon", "grid", "--kspace", d / "k0", "--out", d / "r0"])
    ok(c + ["traj", "scale", "--in", d / "t", "--factor", 3, "--out", d / "tl"])
    ok(c + ["sim", "exact", "--image", d / "ph", "--traj", d / "tl", "--out", d / "kl"])
    ok(c + ["recon", "grid", "--kspace", d / "kl", "--out", d / "rl"])
    ok(c + ["corpus", "build", "--traj", d / "t", "--out", d / "corpus"])
    ok(c + ["corpus", "split", "--manifest", d / "corpus" / "manifest.json",
            "--out-train", d / "train.json", "--out-test", d / "test.json"])
    ok(c + ["net", "train", "--manifest", d / "train.json", "--out-dir", d / "ck"])
    return d, c


def test_version_and_schema():
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        assert main(["--config-schema"]) == 0
    schema = json.loads(out.getvalue())
    assert schema["additionalProperties"] is False and "autofocus" in schema["properties"]
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        assert main(["--version"]) == 0
    assert __version__ in out.getvalue()


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "offres.cli", "bogus"], capture_output=True,
                         text=True)
    assert res.returncode == 2
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"] == "usage"


def test_unknown_subcommand():
    code, _, err = run(["traj", "explode"])
    assert code == 2 and json.loads(err)["error"] == "usage"


def test_bad_config_reports_pointer(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"recon": {"oversamp": "two"}}))
    code, _, err = run(["--config", cfg, "traj", "gen", "--out", tmp_path / "t"])
    obj = json.loads(err)
    assert code == 2 and obj["error"] == "config" and obj["pointer"] == "/recon/oversamp"
    cfg.write_text(json.dumps({"nonsense": 1}))
    code, _, err = run(["--config", cfg, "traj", "gen", "--out", tmp_path / "t"])
    assert code == 2 and json.loads(err)["error"] == "config"


def test_missing_input_is_one_line_error(tmp_path):
    code, _, err = run(["recon", "grid", "--kspace", tmp_path / "nope", "--out", tmp_path / "x"])
    assert code == 1 and len(err.splitlines()) == 1
    assert set(json.loads(err)) >= {"error", "message"}


def test_traj_outputs(pipeline):
    d, c = pipeline
    t = read_trajectory(d / "t")
    assert t.n_samples == 8 * 8 * 32 and t.grid_size == (16, 16, 16)
    tl = read_trajectory(d / "tl")
    assert tl.t_read == pytest.approx(3 * t.t_read)
    res = ok(c + ["traj", "check", "--in", d / "t"])
    assert {"max_gradient_mT_per_m", "max_slew_T_per_m_per_s", "feasible"} <= set(res)
    res = ok(c + ["traj", "dcf", "--in", d / "t", "--iterations", 3, "--out", d / "t3"])
    assert read_trajectory(d / "t3").n_samples == t.n_samples


def test_strict_check_fails_when_infeasible(pipeline):
    d, c = pipeline
    code, _, err = run(c + ["traj", "check", "--in", d / "t", "--gmax", 1e-6, "--strict"])
    assert code == 1 and json.loads(err)["error"]


def test_phantom_and_fieldmap_outputs(pipeline):
    d, _ = pipeline
    ph = read_volume(d / "ph")
    assert ph.shape == (16, 16, 16)
    vessel = cfl_read(d / "ph_vessel").real > 0
    np.testing.assert_allclose(np.abs(ph.data[vessel]), 1.0, rtol=1e-6)
    assert np.max(np.abs(cfl_read(d / "fm").real)) == pytest.approx(150.0, rel=1e-6)


def test_sim_and_recon(pipeline):
    d, _ = pipeline
    ks, tpath = read_kspace(d / "k0")
    assert len(ks) == 8 * 8 * 32 and tpath is not None
    assert read_volume(d / "r0").shape == (16, 16, 16)


def test_psf_pair(pipeline):
    d, c = pipeline
    ok(c + ["sim", "psf", "--traj", d / "tl", "--f0", 0, "--out", d / "psf0"])
    res = ok(c + ["sim", "psf", "--traj", d / "tl", "--f0", 250, "--out", d / "psf250"])
    a, b = cfl_read(d / "psf0"), cfl_read(d / "psf250")
    assert np.argmax(np.abs(a)) == np.ravel_multi_index((8, 8, 8), a.shape)
    assert not np.allclose(a, b)
    assert "energy_radius_90" in res


def test_corpus_outputs(pipeline):
    d, _ = pipeline
    man = json.loads((d / "corpus" / "manifest.json").read_text())
    assert len(man["entries"]) == 3 * 2 * 2
    tr = json.loads((d / "train.json").read_text())
    te = json.loads((d / "test.json").read_text())
    assert not set(tr["phantom_ids"]) & set(te["phantom_ids"])
    assert os.path.exists(d / "ck" / "history.csv")


def test_autofocus_commands(pipeline):
    d, c = pipeline
    ok(c + ["autofocus", "run", "--kspace", d / "kl", "--out", d / "af", "--fieldmap-out",
            d / "af_fm", "--metric-csv", d / "af.csv"])
    assert read_volume(d / "af").shape == (16, 16, 16)
    assert len((d / "af.csv").read_text().splitlines()) == 1 + 9
    ok(c + ["autofocus", "fieldmap", "--corrected", d / "af", "--uncorrected", d / "rl",
            "--traj", d / "tl", "--out", d / "cons"])
    assert cfl_read(d / "cons").shape == (16, 16, 16)


def test_net_commands(pipeline):
    d, c = pipeline
    ok(c + ["net", "init", "--out", d / "p0"])
    ck = sorted(p for p in os.listdir(d / "ck") if p.endswith(".npz"))[-1]
    ok(c + ["net", "apply", "--params", d / "ck" / ck, "--image", d / "rl", "--out", d / "na"])
    assert read_volume(d / "na").shape == (16, 16, 16)
    res = ok(c + ["net", "iterate", "--params", d / "ck" / ck, "--image", d / "rl",
                  "--out-prefix", d / "it"])
    assert len(res["nrms_diffs"]) == 2 and res["ratios"][0] == 1.0
    assert os.path.exists(str(d / "it") + "_2.cfl")


def test_eval_commands(pipeline):
    d, c = pipeline
    res = ok(c + ["eval", "metrics", "--image", d / "r0", "--ref", d / "r0"])
    assert res["nrmse"] == 0.0 and res["psnr_db"] is None
    ck = sorted(p for p in os.listdir(d / "ck") if p.endswith(".npz"))[-1]
    ok(c + ["eval", "sweep", "--kspace", d / "kl", "--methods", "none,autofocus,net",
            "--params", d / "ck" / ck, "--out", d / "sweep.csv"])
    lines = (d / "sweep.csv").read_text().splitlines()
    assert lines[0] == "f_hz,method,nrmse,ssim,psnr_db" and len(lines) == 1 + 3 * 3
    ok(c + ["eval", "plot-data", "--sweep", d / "sweep.csv", "--out", d / "tidy.csv"])
    assert len((d / "tidy.csv").read_text().splitlines()) == 1 + 27


def test_seed_override_changes_phantom(ws):
    d, c = ws
    ok(c + ["phantom", "gen", "--out", d / "s1"])
    ok(c + ["--seed", 99, "phantom", "gen", "--out", d / "s2"])
    ok(c + ["phantom", "gen", "--out", d / "s3"])
    assert not np.array_equal(cfl_read(d / "s1"), cfl_read(d / "s2"))
    assert np.array_equal(cfl_read(d / "s1"), cfl_read(d / "s3"))


def test_threads_do_not_change_results(pipeline):
    d, c = pipeline
    for n in (1, 2):
        ok(c + ["--threads", n, "sim", "fast", "--image", d / "ph", "--traj", d / "t",
                "--fieldmap", d / "fm", "--out", d / f"kt{n}"])
        ok(c + ["--threads", n, "recon", "grid", "--kspace", d / f"kt{n}", "--out", d / f"rt{n}"])
        ok(c + ["--threads", n, "net", "apply", "--params",
                d / "ck" / "epoch_001.npz", "--image", d / f"rt{n}", "--out", d / f"nt{n}"])
    for stem in ("kt", "rt", "nt"):
        assert (d / f"{stem}1.cfl").read_bytes() == (d / f"{stem}2.cfl").read_bytes()


def test_output_is_strict_json(pipeline, tmp_path):
    d, c = pipeline
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        assert main([str(a) for a in c + ["net", "train", "--manifest", d / "train.json",
                                           "--out-dir", tmp_path / "ck"]]) == 0

    def reject(token):
        raise ValueError(token)

    res = json.loads(out.getvalue().strip().splitlines()[-1], parse_constant=reject)
    # no validation split, so the validation loss is reported as null
    assert all(row["val_l1"] is None for row in res["history"])
