"""``offres`` command-line interface.

Every subcommand reads its inputs from files, writes its outputs to files
and prints a one-line JSON summary on stdout.  Failures print a one-line
JSON object ``{"error": code, "message": ...}`` on stderr and exit nonzero.
"""
import json
import math
import os
import sys

import click
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import SCHEMA, ConfigError, load_config
from .errors import OffresError

EXIT_FAILURE = 1
EXIT_USAGE = 2


def _emit(obj):
    click.echo(json.dumps(_jsonable(obj), sort_keys=True, allow_nan=False))


def _jsonable(o):
    # plain JSON only: numpy scalars/arrays unpacked, nan and inf become null
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in (o.tolist() if isinstance(o, np.ndarray) else o)]
    if isinstance(o, np.generic):
        o = o.item()
    if isinstance(o, float):
        return o if math.isfinite(o) else None
    if o is None or isinstance(o, (str, int, bool)):
        return o
    return str(o)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text, n=None):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise click.BadParameter(f"expected {n} integers, got {text!r}")
    return vals


class _Ctx:
    def __init__(self, cfg):
        self.cfg = cfg

    @property
    def seed(self):
        return self.cfg["seed"]

    @property
    def recon(self):
        r = self.cfg["recon"]
        return r["oversamp"], r["kernel_width"]


def _print_schema(ctx, _param, value):
    if value and not ctx.resilient_parsing:
        click.echo(json.dumps(SCHEMA, indent=1, sort_keys=True))
        ctx.exit(0)


@click.group()
@click.version_option(__version__, prog_name="offres")
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="JSON config merged over the defaults.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Cap BLAS/FFT thread pools.")
@click.option("--config-schema", is_flag=True, expose_value=False, is_eager=True,
              callback=_print_schema, help="Print the config JSON schema and exit.")
@click.pass_context
def cli(ctx, config_path, seed, threads):
    """Off-resonance simulation, correction and evaluation pipeline."""
    over = {"seed": seed} if seed is not None else None
    ctx.obj = _Ctx(load_config(config_path, over))
    if threads is not None:
        ctx.with_resource(threadpool_limits(limits=threads))


pass_obj = click.pass_obj


# --- trajectory ---------------------------------------------------------------

@cli.group()
def traj():
    """Cones trajectory generation and checks."""


@traj.command("gen")
@click.option("--out", required=True, help="Output base path.")
@click.option("--t-read", type=float, default=None, help="Readout duration (s).")
@click.option("--dcf-iterations", type=int, default=None)
@pass_obj
def traj_gen(o, out, t_read, dcf_iterations):
    """Generate a cones trajectory from the config."""
    from .io import write_trajectory
    from .trajectory import generate_cones, refine_dcf_pipemenon

    tc = o.cfg["trajectory"]
    t = generate_cones(tc["n_cones"], tc["interleaves_per_cone"], tc["samples_per_interleaf"],
                       tc["t_read"] if t_read is None else t_read, tc["twist"],
                       o.cfg["grid_size"], tc["fov_cm"])
    iters = tc["dcf_iterations"] if dcf_iterations is None else dcf_iterations
    if iters:
        t = refine_dcf_pipemenon(t, iters, o.recon[1], o.recon[0])
    base = write_trajectory(out, t)
    _emit({"out": base, "n_samples": t.n_samples, "t_read": t.t_read})


@traj.command("scale")
@click.option("--in", "src", required=True)
@click.option("--factor", type=float, required=True)
@click.option("--out", required=True)
def traj_scale(src, factor, out):
    """Stretch the readout of a trajectory by FACTOR."""
    from .io import read_trajectory, write_trajectory
    from .trajectory import scale_readout

    t = scale_readout(read_trajectory(src), factor)
    _emit({"out": write_trajectory(out, t), "t_read": t.t_read})


@traj.command("dcf")
@click.option("--in", "src", required=True)
@click.option("--iterations", type=int, default=10)
@click.option("--out", required=True)
@pass_obj
def traj_dcf(o, src, iterations, out):
    """Recompute density compensation with Pipe-Menon iterations."""
    from .io import read_trajectory, write_trajectory
    from .trajectory import refine_dcf_pipemenon

    t = refine_dcf_pipemenon(read_trajectory(src), iterations, o.recon[1], o.recon[0])
    _emit({"out": write_trajectory(out, t), "iterations": iterations})


@traj.command("check")
@click.option("--in", "src", required=True)
@click.option("--gmax", type=float, default=40.0, help="mT/m")
@click.option("--smax", type=float, default=150.0, help="T/m/s")
@click.option("--strict", is_flag=True, help="Exit nonzero when infeasible.")
def traj_check(src, gmax, smax, strict):
    """Report gradient and slew feasibility."""
    from .io import read_trajectory
    from .trajectory import check_feasibility

    rep = check_feasibility(read_trajectory(src), gmax_mT_per_m=gmax, smax_T_per_m_per_s=smax)
    _emit(rep.as_dict())
    if strict and not rep.feasible:
        raise OffresError("trajectory violates gradient or slew limits")


# --- phantoms and field maps ----------------------------------------------------

@cli.group()
def phantom():
    """Synthetic vessel phantoms."""


@phantom.command("gen")
@click.option("--out", required=True)
@click.option("--n-vessels", type=int, default=None)
@click.option("--masks", is_flag=True, help="Also write <out>_vessel / <out>_background.")
@pass_obj
def phantom_gen(o, out, n_vessels, masks):
    """Generate a vessel phantom volume."""
    from .io import cfl_write, write_volume
    from .phantom import gen_vessel_phantom

    nv = o.cfg["phantom"]["n_vessels"] if n_vessels is None else n_vessels
    shape = (o.cfg["grid_size"],) * 3
    if masks:
        vol, m = gen_vessel_phantom(shape, nv, o.seed, return_masks=True)
        for name, arr in m.items():
            cfl_write(f"{out}_{name}", arr.astype(np.complex64))
    else:
        vol = gen_vessel_phantom(shape, nv, o.seed)
    write_volume(out, vol)
    _emit({"out": out, "shape": list(shape), "seed": o.seed})


@cli.group()
def fieldmap():
    """Synthetic field maps."""


@fieldmap.command("gen")
@click.option("--out", required=True)
@click.option("--f-max", type=float, default=None)
@click.option("--n-blobs", type=int, default=None)
@pass_obj
def fieldmap_gen(o, out, f_max, n_blobs):
    """Generate a smooth random field map."""
    from .io import write_fieldmap
    from .phantom import gen_field_map

    fc = o.cfg["fieldmap"]
    fm = gen_field_map((o.cfg["grid_size"],) * 3, fc["f_max"] if f_max is None else f_max,
                       fc["n_blobs"] if n_blobs is None else n_blobs, o.seed, fc["ramp"])
    write_fieldmap(out, fm)
    _emit({"out": out, "max_abs_hz": float(np.abs(fm.data).max())})


# --- simulation --------------------------------------------------------------

@cli.group()
def sim():
    """Forward simulation of k-space data."""


def _sim_inputs(image, traj_path, fmap_path):
    from .io import read_fieldmap, read_trajectory, read_volume

    img = read_volume(image)
    t = read_trajectory(traj_path)
    fm = read_fieldmap(fmap_path).data if fmap_path else None
    return img, t, fm


@sim.command("exact")
@click.option("--image", required=True)
@click.option("--traj", "traj_path", required=True)
@click.option("--fieldmap", "fmap_path", default=None)
@click.option("--out", required=True)
@click.option("--noise-std", type=float, default=None)
@pass_obj
def sim_exact(o, image, traj_path, fmap_path, out, noise_std):
    """Simulate k-space with the direct-sum model."""
    from .forward import forward_exact
    from .io import write_kspace

    img, t, fm = _sim_inputs(image, traj_path, fmap_path)
    sc = o.cfg["sim"]
    ks = forward_exact(img, fm, t, sc["max_cost"],
                       sc["noise_std"] if noise_std is None else noise_std, o.seed)
    write_kspace(out, ks, traj_path)
    _emit({"out": out, "n_samples": len(ks)})


@sim.command("fast")
@click.option("--image", required=True)
@click.option("--traj", "traj_path", required=True)
@click.option("--fieldmap", "fmap_path", default=None)
@click.option("--out", required=True)
@click.option("--n-bins", type=int, default=None)
@click.option("--noise-std", type=float, default=None)
@pass_obj
def sim_fast(o, image, traj_path, fmap_path, out, n_bins, noise_std):
    """Simulate k-space with frequency segmentation."""
    from .forward import forward_freq_segmented
    from .io import write_kspace

    img, t, fm = _sim_inputs(image, traj_path, fmap_path)
    sc = o.cfg["sim"]
    ks = forward_freq_segmented(img, fm, t, sc["n_bins"] if n_bins is None else n_bins,
                                *o.recon, sc["noise_std"] if noise_std is None else noise_std,
                                o.seed)
    write_kspace(out, ks, traj_path)
    _emit({"out": out, "n_samples": len(ks)})


@sim.command("psf")
@click.option("--traj", "traj_path", required=True)
@click.option("--f0", type=float, default=0.0)
@click.option("--location", default=None, help="z,y,x voxel; default is the center.")
@click.option("--out", required=True)
@pass_obj
def sim_psf(o, traj_path, f0, location, out):
    """Local point spread function at one location."""
    from .forward import psf_energy_radius, psf_local
    from .io import read_trajectory, write_volume

    t = read_trajectory(traj_path)
    shape = tuple(t.grid_size)
    loc = tuple(_ints(location, 3)) if location else tuple(n // 2 for n in shape)
    psf = psf_local(t, loc, f0, shape, *o.recon)
    write_volume(out, psf)
    _emit({"out": out, "f0_hz": f0, "location": list(loc),
           "energy_radius_90": psf_energy_radius(psf, loc, 0.9),
           "peak": float(np.abs(psf.data).max())})


# --- reconstruction ------------------------------------------------------------

def _kspace_and_traj(kspace, traj_path):
    from .io import read_kspace, read_trajectory

    ks, ref = read_kspace(kspace)
    tp = traj_path or ref
    if tp is None:
        raise ConfigError("k-space header names no trajectory; pass --traj")
    return ks, read_trajectory(tp), tp


@cli.group()
def recon():
    """Gridding reconstruction."""


@recon.command("grid")
@click.option("--kspace", required=True)
@click.option("--traj", "traj_path", default=None)
@click.option("--out", required=True)
@click.option("--no-dcf", is_flag=True)
@pass_obj
def recon_grid(o, kspace, traj_path, out, no_dcf):
    """Gridding reconstruction of k-space data."""
    from .io import write_volume
    from .recon import grid_adjoint

    ks, t, _ = _kspace_and_traj(kspace, traj_path)
    img = grid_adjoint(ks, t, t.grid_size, *o.recon, use_dcf=not no_dcf)
    write_volume(out, img)
    _emit({"out": out, "shape": list(img.data.shape)})


# --- corpus --------------------------------------------------------------------

@cli.group()
def corpus():
    """Training corpus construction."""


@corpus.command("build")
@click.option("--traj", "traj_path", required=True, help="Short-readout trajectory.")
@click.option("--out", "out_dir", required=True)
@click.option("--n-phantoms", type=int, default=None)
@click.option("--factors", default=None, help="Comma-separated readout factors.")
@click.option("--freqs", default=None, help="Comma-separated frequencies (Hz).")
@pass_obj
def corpus_build(o, traj_path, out_dir, n_phantoms, factors, freqs):
    """Simulate a training corpus and write its manifest."""
    from .dataset import build_corpus
    from .io import read_trajectory

    cc = o.cfg["corpus"]
    m = build_corpus(cc["n_phantoms"] if n_phantoms is None else n_phantoms,
                     read_trajectory(traj_path),
                     cc["scale_factors"] if factors is None else _floats(factors),
                     cc["freqs_hz"] if freqs is None else _floats(freqs),
                     o.seed, out_dir, n_vessels=o.cfg["phantom"]["n_vessels"],
                     fieldmap_fmax=cc["fieldmap_fmax"], n_bins=o.cfg["sim"]["n_bins"],
                     oversamp=o.recon[0], kernel_width=o.recon[1])
    _emit({"manifest": os.path.join(out_dir, "manifest.json"), "pairs": len(m["entries"])})


@corpus.command("split")
@click.option("--manifest", "manifest_path", required=True)
@click.option("--train-fraction", type=float, default=None)
@click.option("--out-train", required=True)
@click.option("--out-test", required=True)
@pass_obj
def corpus_split(o, manifest_path, train_fraction, out_train, out_test):
    """Split a manifest into train and test sets by phantom."""
    from .dataset import read_manifest, split, write_manifest

    m = read_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    frac = o.cfg["corpus"]["train_fraction"] if train_fraction is None else train_fraction
    tr, te = split(m, frac, o.seed)
    for part, path in ((tr, out_train), (te, out_test)):
        part["root"] = os.path.relpath(root, os.path.dirname(os.path.abspath(path)))
        write_manifest(path, part)
    _emit({"train_phantoms": tr["phantom_ids"], "test_phantoms": te["phantom_ids"]})


def _manifest_root(manifest_path, m):
    here = os.path.dirname(os.path.abspath(manifest_path))
    return os.path.normpath(os.path.join(here, m.get("root", ".")))


# --- autofocus -------------------------------------------------------------------

def _af_cfg(o):
    from .autofocus import AutofocusConfig

    return AutofocusConfig(**o.cfg["autofocus"], oversamp=o.recon[0], kernel_width=o.recon[1])


@cli.group()
def autofocus():
    """Autofocus correction baseline."""


@autofocus.command("run")
@click.option("--kspace", required=True)
@click.option("--traj", "traj_path", default=None)
@click.option("--out", required=True)
@click.option("--fieldmap-out", default=None)
@click.option("--metric-csv", default=None, help="Write (f_hz, mean_metric) per candidate.")
@pass_obj
def autofocus_run(o, kspace, traj_path, out, fieldmap_out, metric_csv):
    """Autofocus correction of k-space data."""
    from .autofocus import autofocus_correct
    from .io import write_fieldmap, write_volume

    ks, t, _ = _kspace_and_traj(kspace, traj_path)
    trace = [] if metric_csv else None
    img, fm = autofocus_correct(ks, t, t.grid_size, _af_cfg(o), trace)
    write_volume(out, img)
    if fieldmap_out:
        write_fieldmap(fieldmap_out, fm)
    if metric_csv:
        with open(metric_csv, "w") as fh:
            fh.write("f_hz,mean_metric\n")
            for f, m in trace:
                fh.write(f"{f!r},{m!r}\n")
    _emit({"out": out, "fieldmap": fieldmap_out})


@autofocus.command("fieldmap")
@click.option("--corrected", required=True)
@click.option("--uncorrected", required=True)
@click.option("--traj", "traj_path", required=True)
@click.option("--out", required=True)
@click.option("--smooth", is_flag=True)
@pass_obj
def autofocus_fieldmap(o, corrected, uncorrected, traj_path, out, smooth):
    """Field map that explains a corrected/uncorrected pair."""
    from .autofocus import estimate_consistency_fieldmap
    from .io import read_trajectory, read_volume, write_fieldmap

    fm = estimate_consistency_fieldmap(read_volume(corrected), read_volume(uncorrected),
                                       read_trajectory(traj_path), _af_cfg(o), smooth)
    write_fieldmap(out, fm)
    sel = fm.data[fm.data != 0]
    _emit({"out": out, "median_hz": float(np.median(sel)) if sel.size else 0.0})


# --- network -----------------------------------------------------------------------

def _net_cfg(o):
    from .network import NetConfig

    return NetConfig(**o.cfg["network"], seed=o.seed)


@cli.group()
def net():
    """Off-resonance correction network."""


@net.command("init")
@click.option("--out", required=True)
@pass_obj
def net_init_cmd(o, out):
    """Write freshly initialised network parameters."""
    from .network import net_init, save_checkpoint

    p = net_init(_net_cfg(o))
    save_checkpoint(p, out)
    _emit({"out": out, "n_params": int(sum(v.size for v in p.tensors.values()))})


@net.command("train")
@click.option("--manifest", "manifest_path", required=True)
@click.option("--out-dir", required=True)
@click.option("--params", "params_path", default=None, help="Resume from a checkpoint.")
@click.option("--epochs", type=int, default=None)
@pass_obj
def net_train(o, manifest_path, out_dir, params_path, epochs):
    """Train the network on a corpus manifest."""
    from .dataset import load_pairs, read_manifest
    from .network import load_checkpoint, save_checkpoint, train

    m = read_manifest(manifest_path)
    pairs = load_pairs(m, _manifest_root(manifest_path, m))
    params = load_checkpoint(params_path) if params_path else None
    cfg = params.cfg if params is not None else _net_cfg(o)
    tc = o.cfg["train"]
    p, hist = train(cfg, pairs, tc["epochs"] if epochs is None else epochs, out_dir,
                    val_fraction=tc["val_fraction"], params=params,
                    log=lambda msg: click.echo(msg, err=True))
    save_checkpoint(p, os.path.join(out_dir, "final"))
    _emit({"out": os.path.join(out_dir, "final"), "history": hist})


@net.command("apply")
@click.option("--params", "params_path", required=True)
@click.option("--image", required=True)
@click.option("--out", required=True)
@click.option("--tile", type=int, default=None)
@pass_obj
def net_apply(o, params_path, image, out, tile):
    """Apply the network to a volume (tiled)."""
    from .data import ComplexVolume
    from .io import read_volume, write_volume
    from .network import apply, load_checkpoint

    vol = read_volume(image)
    y = apply(load_checkpoint(params_path), vol.data, o.cfg["eval"]["tile"] if tile is None else tile)
    write_volume(out, ComplexVolume(y, vol.spacing))
    _emit({"out": out})


@net.command("iterate")
@click.option("--params", "params_path", required=True)
@click.option("--image", required=True)
@click.option("--n", type=int, default=None)
@click.option("--out-prefix", default=None, help="Write each iterate as <prefix>_<k>.")
@pass_obj
def net_iterate(o, params_path, image, n, out_prefix):
    """Apply the network repeatedly and report successive differences."""
    from .io import read_volume, write_volume
    from .metrics import iterate_apply
    from .network import load_checkpoint

    ec = o.cfg["eval"]
    vols, diffs, ratios = iterate_apply(load_checkpoint(params_path), read_volume(image),
                                        ec["iterate_n"] if n is None else n, ec["tile"])
    if out_prefix:
        for k, v in enumerate(vols[1:], 1):
            write_volume(f"{out_prefix}_{k}", v)
    _emit({"nrms_diffs": diffs, "ratios": ratios})


# --- evaluation --------------------------------------------------------------------

@cli.group("eval")
def eval_():
    """Image-quality metrics and sweeps."""


@eval_.command("metrics")
@click.option("--image", required=True)
@click.option("--ref", required=True)
def eval_metrics(image, ref):
    """NRMSE, SSIM and PSNR of an image against a reference."""
    from .io import read_volume
    from .metrics import all_metrics

    m = all_metrics(read_volume(image), read_volume(ref))
    _emit({k: (None if v == float("inf") else v) for k, v in m.items()})


@eval_.command("sweep")
@click.option("--kspace", required=True, help="On-resonance k-space.")
@click.option("--traj", "traj_path", default=None)
@click.option("--methods", default=None, help="Comma-separated subset of none,autofocus,net.")
@click.option("--params", "params_path", default=None)
@click.option("--freqs", default=None)
@click.option("--out", required=True, help="CSV path.")
@pass_obj
def eval_sweep(o, kspace, traj_path, methods, params_path, freqs, out):
    """Off-resonance sweep of correction methods."""
    from .metrics import DEFAULT_SWEEP_FREQS, sweep_eval
    from .network import load_checkpoint

    ks, t, _ = _kspace_and_traj(kspace, traj_path)
    ec = o.cfg["eval"]
    meths = ec["methods"] if methods is None else [m.strip() for m in methods.split(",")]
    fr = _floats(freqs) if freqs else (ec["freqs_hz"] or DEFAULT_SWEEP_FREQS)
    params = load_checkpoint(params_path) if params_path else None
    rows = sweep_eval(ks, t, meths, fr, out, net_params=params, af_cfg=_af_cfg(o),
                      oversamp=o.recon[0], kernel_width=o.recon[1])
    _emit({"out": out, "rows": len(rows)})


@eval_.command("plot-data")
@click.option("--sweep", "sweep_csv", required=True)
@click.option("--out", required=True)
def eval_plot_data(sweep_csv, out):
    """Tidy, per-|f| summary of a sweep CSV."""
    from .metrics import read_sweep_csv, write_tidy_csv

    rows = read_sweep_csv(sweep_csv)
    write_tidy_csv(rows, out)
    _emit({"out": out, "rows": 3 * len(rows)})


# --- entry point ---------------------------------------------------------------

def _fail(code, message, pointer=None):
    obj = {"error": code, "message": " ".join(str(message).split())}
    if pointer:
        obj["pointer"] = pointer
    click.echo(json.dumps(obj, sort_keys=True), err=True)


def main(argv=None):
    """Console entry point; returns the process exit code."""
    try:
        cli.main(args=argv, prog_name="offres", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        _fail("aborted", "aborted")
        return EXIT_FAILURE
    except click.UsageError as exc:
        _fail("usage", exc.format_message())
        return EXIT_USAGE
    except click.ClickException as exc:
        _fail("usage", exc.format_message())
        return exc.exit_code or EXIT_USAGE
    except ConfigError as exc:
        _fail(exc.code, exc, exc.pointer)
        return EXIT_USAGE
    except OffresError as exc:
        _fail(exc.code, exc)
        return EXIT_FAILURE
    except (OSError, ValueError, KeyError, FloatingPointError, MemoryError) as exc:
        _fail(type(exc).__name__.lower(), exc)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
