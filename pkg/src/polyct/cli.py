"""Command-line driver.

Exit codes: 0 success, 1 validation or input error, 2 numerical failure.
Diagnostics go to stderr; machine-readable results only to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, baselines, fileio, metrics, phantom, pipeline
from . import spectrum as sp
from . import training
from .field import save_checkpoint
from .presets import PRESETS

log = logging.getLogger("polyct")


class UsageError(ValueError):
    pass


def _manifest(out_dir: Path, command: str, args: argparse.Namespace, inputs: dict, outputs: list, extra=None):
    record = {
        "command": command,
        "version": __version__,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "inputs": {k: {"path": str(p), "sha256": fileio.sha256_file(p)} for k, p in inputs.items()},
        "outputs": {str(Path(p).name): fileio.sha256_file(p) for p in outputs},
    }
    if extra:
        record.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str))
    return path


def _sidecar_files(stem_path) -> list:
    s = fileio.stem(stem_path)
    return [s.with_suffix(".raw"), s.with_suffix(".json")]


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


# --- simulate -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    preset = PRESETS[args.preset]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source = sp.read_csv(args.spectrum) if args.spectrum else None
    metal = phantom.read_material_csv(args.metal) if args.metal else None
    case = pipeline.simulate_case(
        preset, seed=args.seed, noise=args.noise, n_energies=args.n_energies,
        photons_per_ray=args.photons, source=source, metal=metal,
        partial_volume=args.partial_volume,
    )
    files = [
        fileio.write_sinogram(out / "sinogram", case.sinogram),
        fileio.write_array(out / "gt", case.body, "mm^-1", "image"),
        fileio.write_array(out / "mask", case.mask, "binary", "metal_mask"),
    ]
    spec_path = out / "spectrum.csv"
    sp.write_csv(spec_path, case.spectrum)
    outputs = [f for p in files for f in _sidecar_files(p)] + [spec_path]
    inputs = {}
    if args.spectrum:
        inputs["spectrum"] = args.spectrum
    if args.metal:
        inputs["metal"] = args.metal
    _manifest(out, "simulate", args, inputs, outputs,
              {"geometry_sha256": case.geometry.digest(), "seed": args.seed})
    log.info("wrote simulation to %s", out)
    return 0


# --- reconstruct --------------------------------------------------------------

def _input_paths(args):
    d = Path(args.input) if args.input else None
    sino = args.sinogram or (d / "sinogram" if d else None)
    spec = args.spectrum or (d / "spectrum.csv" if d else None)
    mask = args.mask or (d / "mask" if d else None)
    if sino is None or spec is None or mask is None:
        raise UsageError("give --input DIR or all of --sinogram, --spectrum, --mask")
    return Path(sino), Path(spec), Path(mask)


def cmd_reconstruct(args) -> int:
    preset = PRESETS[args.preset]
    sino_p, spec_p, mask_p = _input_paths(args)
    sino = fileio.read_sinogram(sino_p)
    source = sp.read_csv(spec_p)
    mask, _ = fileio.read_array(mask_p)
    geom = sino.geometry
    if mask.shape != (geom.image_height, geom.image_width):
        raise UsageError(f"mask shape {mask.shape} does not match geometry image grid")
    cfg = training.TrainConfig(
        batch_rays=args.batch_rays,
        lam=args.lam,
        epochs=preset.epochs if args.epochs is None else args.epochs,
        seed=args.seed,
        n_energies=preset.n_energies if args.n_energies is None else args.n_energies,
        energy_range=tuple(args.energy_range or preset.energy_range),
        encoder=preset.encoder,
    )
    t0 = time.time()
    img, res, spec = pipeline.reconstruct(sino, source, mask.astype(np.uint8), cfg,
                                          mask_dilation=args.mask_dilation, threads=args.threads)
    log.info("trained %d epochs in %.1f s", cfg.epochs, time.time() - t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recon = fileio.write_array(out / "recon", img, "mm^-1", "image",
                               {"energy_keV": float(sp.effective_energy(spec))})
    ckpt = out / "checkpoint"
    save_checkpoint(ckpt, res.params, cfg.encoder, {"energies": spec.energies.tolist()})
    loss = out / "loss.csv"
    training.write_history_csv(loss, res.history)
    outputs = _sidecar_files(recon) + [ckpt.with_suffix(".bin"), ckpt.with_suffix(".json"), loss]
    inputs = {"sinogram": fileio.stem(sino_p).with_suffix(".raw"), "spectrum": spec_p,
              "mask": fileio.stem(mask_p).with_suffix(".raw")}
    _manifest(out, "reconstruct", args, inputs, outputs,
              {"geometry_sha256": geom.digest(), "train_config": cfg.to_dict()})
    return 0


# --- baselines ----------------------------------------------------------------

def cmd_baseline(args) -> int:
    d = Path(args.input) if args.input else None
    sino_p = Path(args.sinogram) if args.sinogram else (d / "sinogram" if d else None)
    if sino_p is None:
        raise UsageError("give --input DIR or --sinogram")
    sino = fileio.read_sinogram(sino_p)
    inputs = {"sinogram": fileio.stem(sino_p).with_suffix(".raw")}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if args.method == "li":
        mask_p = Path(args.mask) if args.mask else (d / "mask" if d else None)
        if mask_p is None:
            raise UsageError("baseline li needs --mask or --input DIR")
        mask, _ = fileio.read_array(mask_p)
        inputs["mask"] = fileio.stem(mask_p).with_suffix(".raw")
        trace = baselines.metal_trace(mask, sino.geometry)
        sino = baselines.li_inpaint(sino, trace)
        outputs += _sidecar_files(fileio.write_sinogram(out / "sinogram_li", sino))
    img = baselines.fbp(sino, window=args.window)
    outputs += _sidecar_files(fileio.write_array(out / args.method, img, "mm^-1", "image"))
    _manifest(out, f"baseline {args.method}", args, inputs, outputs,
              {"geometry_sha256": sino.geometry.digest()})
    return 0


# --- eval / export --------------------------------------------------------------

def cmd_eval(args) -> int:
    ref, _ = fileio.read_array(args.ref)
    test, _ = fileio.read_array(args.test)
    if ref.shape != test.shape:
        raise UsageError(f"shape mismatch {ref.shape} vs {test.shape}")
    ref = ref.astype(np.float64)
    test = test.astype(np.float64)
    regions = ["full", "nonmetal"] if args.region == "both" else [args.region]
    mask = None
    if "nonmetal" in regions:
        if not args.mask:
            raise UsageError("non-metal region needs --mask")
        mask, _ = fileio.read_array(args.mask)
    dr = float(ref.max()) if args.data_range is None else args.data_range
    results = []
    for r in regions:
        reg = pipeline.nonmetal_region(mask) if r == "nonmetal" else None
        results.append(metrics.report(ref, test, reg, dr, r))
    Path(args.out).write_text(json.dumps(results if len(results) > 1 else results[0], indent=2))
    return 0


def cmd_export_png(args) -> int:
    grid, _ = fileio.read_array(args.input)
    if grid.ndim == 3:
        grid = grid[args.channel]
    fileio.export_png(args.out, grid, args.window)
    return 0


def cmd_spectrum(args) -> int:
    lo, hi = args.energy_range
    if args.kind == "uniform":
        s = sp.uniform_spectrum(lo, hi, args.step)
    else:
        s = sp.tungsten_like_spectrum(lo, hi, args.step)
    sp.write_csv(args.out, s)
    return 0


def cmd_metal_table(args) -> int:
    lo, hi = args.energy_range
    phantom.write_material_csv(args.out, phantom.power_law_metal(lo=lo, hi=hi))
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyct", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize a metal-corrupted sinogram")
    s.add_argument("--preset", choices=sorted(PRESETS), default="desk64")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=_on_off, default=True, metavar="{on,off}")
    s.add_argument("--n-energies", type=int, default=None,
                   help="resample the source spectrum to this many levels (1 = monochromatic)")
    s.add_argument("--photons", type=float, default=None, help="photons per ray")
    s.add_argument("--spectrum", help="source spectrum CSV (energy_keV,relative_count)")
    s.add_argument("--metal", help="metal LAC table CSV (energy_keV,lac_per_mm)")
    s.add_argument("--partial-volume", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", help="fit the polychromatic neural field")
    r.add_argument("--input", help="directory written by 'simulate'")
    r.add_argument("--sinogram")
    r.add_argument("--spectrum")
    r.add_argument("--mask")
    r.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    r.add_argument("--lambda", dest="lam", type=float, default=0.2)
    r.add_argument("--epochs", type=int, default=None)
    r.add_argument("--batch-rays", type=int, default=80)
    r.add_argument("--n-energies", type=int, default=None)
    r.add_argument("--energy-range", type=float, nargs=2, default=None, metavar=("LO", "HI"))
    r.add_argument("--mask-dilation", type=int, default=1,
                   help="pixels of metal-mask growth used by the smoothness loss")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    b = sub.add_parser("baseline", help="classical reconstructions")
    b.add_argument("method", choices=["fbp", "li"])
    b.add_argument("--input")
    b.add_argument("--sinogram")
    b.add_argument("--mask")
    b.add_argument("--window", choices=["ramlak", "hann"], default="ramlak")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    e = sub.add_parser("eval", help="PSNR/SSIM report")
    e.add_argument("--ref", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--mask")
    e.add_argument("--region", choices=["full", "nonmetal", "both"], default="both")
    e.add_argument("--data-range", type=float, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-png", help="windowed 8-bit PNG of a grid")
    x.add_argument("--input", required=True)
    x.add_argument("--window", type=float, nargs=2, required=True, metavar=("LO", "HI"))
    x.add_argument("--channel", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_png)

    g = sub.add_parser("spectrum", help="write a synthetic spectrum CSV")
    g.add_argument("--kind", choices=["uniform", "tungsten"], default="tungsten")
    g.add_argument("--energy-range", type=float, nargs=2, default=(20.0, 120.0))
    g.add_argument("--step", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_spectrum)

    m = sub.add_parser("metal-table", help="write the synthetic metal LAC table")
    m.add_argument("--energy-range", type=float, nargs=2, default=(20.0, 120.0))
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metal_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except training.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
