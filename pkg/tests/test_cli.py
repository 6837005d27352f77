import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from polyct import cli, fileio, pipeline, presets, spectrum as sp, training
from polyct.phantom import Sinogram

from conftest import small_geometry


def run(*argv):
    return cli.main([str(a) for a in argv])


def file_bytes(d, names):
    return {n: (d / n).read_bytes() for n in names}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--preset", "desk64", "--seed", 7, "--out", d) == 0
    return d


SIM_FILES = ["sinogram.raw", "sinogram.json", "gt.raw", "gt.json", "mask.raw", "mask.json",
             "spectrum.csv"]


def test_array_roundtrip_bit_exact(tmp_path):
    a = np.random.default_rng(0).normal(size=(3, 5, 7)).astype(np.float32)
    fileio.write_array(tmp_path / "a", a, "mm^-1", "poly_image")
    b, meta = fileio.read_array(tmp_path / "a.raw")
    assert np.array_equal(a, b) and b.dtype == np.float32
    assert meta == {"dtype": "f32le", "shape": [3, 5, 7], "units": "mm^-1", "kind": "poly_image"}
    assert (tmp_path / "a.raw").stat().st_size == a.size * 4


def test_sinogram_roundtrip(tmp_path):
    g = small_geometry()
    v = np.random.default_rng(1).uniform(size=g.shape).astype(np.float32)
    fileio.write_sinogram(tmp_path / "s", Sinogram(v, g))
    s = fileio.read_sinogram(tmp_path / "s")
    assert s.geometry == g and np.array_equal(s.values, v)


def test_read_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        fileio.read_array(tmp_path / "nothing")
    fileio.write_array(tmp_path / "a", np.zeros(4), "1", "x")
    (tmp_path / "a.raw").write_bytes(b"\0" * 12)
    with pytest.raises(ValueError):
        fileio.read_array(tmp_path / "a")
    fileio.write_array(tmp_path / "b", np.zeros(4), "1", "x")
    with pytest.raises(ValueError):
        fileio.read_sinogram(tmp_path / "b")


def test_simulate_outputs(sim_dir):
    for n in SIM_FILES + ["manifest.json"]:
        assert (sim_dir / n).exists()
    man = json.loads((sim_dir / "manifest.json").read_text())
    assert man["seed"] == 7 and man["args"]["preset"] == "desk64"
    assert man["outputs"]["sinogram.raw"] == fileio.sha256_file(sim_dir / "sinogram.raw")
    meta = json.loads((sim_dir / "sinogram.json").read_text())
    assert meta["shape"] == [90, meta["geometry"]["num_detectors"]]


def test_simulate_rerun_is_bit_identical(sim_dir, tmp_path):
    assert run("simulate", "--preset", "desk64", "--seed", 7, "--out", tmp_path) == 0
    assert file_bytes(sim_dir, SIM_FILES) == file_bytes(tmp_path, SIM_FILES)
    assert run("simulate", "--preset", "desk64", "--seed", 8, "--out", tmp_path / "b") == 0
    assert (tmp_path / "b" / "sinogram.raw").read_bytes() != (sim_dir / "sinogram.raw").read_bytes()


def test_reconstruct_outputs_and_determinism(sim_dir, tmp_path):
    args = ["reconstruct", "--input", sim_dir, "--preset", "desk64", "--epochs", 25]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert run("--threads", 2, *args, "--out", tmp_path / "c") == 0
    names = ["recon.raw", "recon.json", "checkpoint.bin", "checkpoint.json", "loss.csv"]
    a = file_bytes(tmp_path / "a", names)
    assert a == file_bytes(tmp_path / "b", names) == file_bytes(tmp_path / "c", names)
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    sino = fileio.read_sinogram(sim_dir / "sinogram")
    assert man["geometry_sha256"] == sino.geometry.digest()
    assert man["train_config"]["n_energies"] == 51 and man["train_config"]["lam"] == 0.2
    rows = (tmp_path / "a" / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,lr,L_DC,L_EDS,L_total" and len(rows) == 26


def test_reconstruct_defaults():
    args = cli.build_parser().parse_args(["reconstruct", "--input", "x", "--out", "y"])
    assert (args.lam, args.batch_rays, args.preset) == (0.2, 80, "paper")
    assert presets.PRESETS["paper"].epochs == 4000
    assert training.TrainConfig().lr0 == 1e-3


def test_lambda_zero_reports_eds_column(sim_dir, tmp_path):
    assert run("reconstruct", "--input", sim_dir, "--preset", "desk64", "--epochs", 5,
               "--lambda", 0, "--out", tmp_path) == 0
    rows = [r.split(",") for r in (tmp_path / "loss.csv").read_text().splitlines()[1:]]
    assert all(float(r[3]) > 0 and r[2] == r[4] for r in rows)


def test_monochromatic_cli_matches_linear_arm(tmp_path):
    assert run("simulate", "--preset", "desk64", "--noise", "off", "--n-energies", 1,
               "--out", tmp_path / "s") == 0
    assert run("reconstruct", "--input", tmp_path / "s", "--preset", "desk64", "--epochs", 20,
               "--n-energies", 1, "--lambda", 0, "--out", tmp_path / "r") == 0
    cli_img, _ = fileio.read_array(tmp_path / "r" / "recon")
    sino = fileio.read_sinogram(tmp_path / "s" / "sinogram")
    spec = sp.read_csv(tmp_path / "s" / "spectrum.csv")
    assert len(spec) == 1 and spec.energies[0] == 70.0
    mask, _ = fileio.read_array(tmp_path / "s" / "mask")
    cfg = training.TrainConfig(lam=0.0, epochs=20, n_energies=1, encoder=presets.DESK64.encoder)
    img, res, _ = pipeline.reconstruct(sino, spec, mask, cfg)
    assert np.array_equal(cli_img, img.astype(np.float32))
    assert all(row[3] == 0.0 for row in res.history)


def test_baselines_cli(sim_dir, tmp_path):
    assert run("baseline", "fbp", "--input", sim_dir, "--out", tmp_path) == 0
    assert run("baseline", "li", "--input", sim_dir, "--out", tmp_path) == 0
    case_sino = fileio.read_sinogram(sim_dir / "sinogram")
    li_sino = fileio.read_sinogram(tmp_path / "sinogram_li")
    mask, _ = fileio.read_array(sim_dir / "mask")
    from polyct.baselines import metal_trace
    tr = metal_trace(mask, case_sino.geometry).astype(bool)
    assert tr.any() and np.array_equal(li_sino.values[~tr], case_sino.values[~tr])
    gt, _ = fileio.read_array(sim_dir / "gt")
    fbp, _ = fileio.read_array(tmp_path / "fbp")
    li, _ = fileio.read_array(tmp_path / "li")
    region = pipeline.nonmetal_region(mask)
    from polyct.metrics import psnr
    assert psnr(gt, li, region=region) > psnr(gt, fbp, region=region)


def test_baseline_zero_sinogram(tmp_path):
    g = small_geometry()
    fileio.write_sinogram(tmp_path / "z", Sinogram(np.zeros(g.shape), g))
    assert run("baseline", "fbp", "--sinogram", tmp_path / "z", "--out", tmp_path / "o") == 0
    img, _ = fileio.read_array(tmp_path / "o" / "fbp")
    assert np.abs(img).max() < 1e-9


def test_eval_cli(sim_dir, tmp_path):
    gt = sim_dir / "gt"
    assert run("eval", "--ref", gt, "--test", gt, "--mask", sim_dir / "mask",
               "--out", tmp_path / "m.json") == 0
    res = json.loads((tmp_path / "m.json").read_text())
    assert [r["region"] for r in res] == ["full", "nonmetal"]
    assert all(r["psnr_db"] == "inf" and abs(r["ssim"] - 1) < 1e-9 for r in res)
    assert run("eval", "--ref", gt, "--test", gt, "--region", "full",
               "--out", tmp_path / "f.json") == 0
    assert json.loads((tmp_path / "f.json").read_text())["region"] == "full"


def test_eval_matches_metrics_module(sim_dir, tmp_path):
    assert run("baseline", "fbp", "--input", sim_dir, "--out", tmp_path) == 0
    assert run("eval", "--ref", sim_dir / "gt", "--test", tmp_path / "fbp", "--mask",
               sim_dir / "mask", "--out", tmp_path / "m.json") == 0
    res = json.loads((tmp_path / "m.json").read_text())
    from polyct import metrics
    gt, _ = fileio.read_array(sim_dir / "gt")
    img, _ = fileio.read_array(tmp_path / "fbp")
    mask, _ = fileio.read_array(sim_dir / "mask")
    gt, img = gt.astype(float), img.astype(float)
    assert res[0] == metrics.report(gt, img, None, float(gt.max()), "full")
    assert res[1] == metrics.report(gt, img, pipeline.nonmetal_region(mask), float(gt.max()), "nonmetal")


def test_exit_codes(tmp_path, monkeypatch):
    assert run("reconstruct", "--input", tmp_path / "missing", "--out", tmp_path / "o") == 1
    assert run("eval", "--ref", tmp_path / "x", "--test", tmp_path / "x", "--out", tmp_path / "o") == 1
    assert run("--threads", 0, "spectrum", "--out", tmp_path / "s.csv") == 1
    fileio.write_array(tmp_path / "a", np.zeros((12, 12)), "1", "image")
    fileio.write_array(tmp_path / "b", np.zeros((12, 13)), "1", "image")
    assert run("eval", "--ref", tmp_path / "a", "--test", tmp_path / "b", "--out", tmp_path / "o") == 1
    assert run("export-png", "--input", tmp_path / "a", "--window", 1, 0, "--out", tmp_path / "p.png") == 1

    def boom(*a, **k):
        raise training.NumericalError("non-finite loss at epoch 0")
    sim = tmp_path / "sim"
    assert run("simulate", "--noise", "off", "--out", sim) == 0
    monkeypatch.setattr(pipeline, "reconstruct", boom)
    assert run("reconstruct", "--input", sim, "--preset", "desk64", "--out", tmp_path / "r") == 2


def test_spectrum_and_metal_commands(tmp_path):
    assert run("spectrum", "--kind", "uniform", "--out", tmp_path / "u.csv") == 0
    s = sp.read_csv(tmp_path / "u.csv")
    assert len(s) == 101 and np.allclose(s.weights, 1 / 101)
    assert run("metal-table", "--out", tmp_path / "m.csv") == 0
    assert (tmp_path / "m.csv").read_text().startswith("energy_keV,lac_per_mm")
    assert run("simulate", "--spectrum", tmp_path / "u.csv", "--metal", tmp_path / "m.csv",
               "--noise", "off", "--out", tmp_path / "sim") == 0
    man = json.loads((tmp_path / "sim" / "manifest.json").read_text())
    assert set(man["inputs"]) == {"spectrum", "metal"}


def test_export_png_mapping(tmp_path):
    g = np.array([[0.0, 0.5, 1.0], [-1.0, 2.0, 0.25]])
    fileio.export_png(tmp_path / "a.png", g, (0.0, 1.0))
    px = np.asarray(Image.open(tmp_path / "a.png"))
    assert px.tolist() == [[0, 128, 255], [0, 255, 64]]
    fileio.export_png(tmp_path / "c.png", np.full((4, 4), 0.3), (0, 1))
    assert np.ptp(np.asarray(Image.open(tmp_path / "c.png"))) == 0
    with pytest.raises(ValueError):
        fileio.export_png(tmp_path / "x.png", g, (1.0, 1.0))


def test_export_png_cli(sim_dir, tmp_path):
    assert run("export-png", "--input", sim_dir / "gt", "--window", 0, 0.03,
               "--out", tmp_path / "gt.png") == 0
    assert Image.open(tmp_path / "gt.png").size == (64, 64)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=30))
def test_export_png_monotone(tmp_path_factory, vals):
    d = tmp_path_factory.mktemp("png")
    v = np.sort(np.array(vals))[None, :]
    fileio.export_png(d / "m.png", v, (-5, 5))
    px = np.asarray(Image.open(d / "m.png"))[0].astype(int)
    assert np.all(np.diff(px) >= 0)
