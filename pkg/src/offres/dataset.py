"""Training corpus construction and phantom-level train/test splits.

Each phantom is simulated once on the short-readout trajectory.  Its
reconstruction is the reference; inputs are produced by moving the same
k-space onto longer readouts and injecting a global off-resonance.
"""
import json
import os

import numpy as np

from .errors import ValidationError
from .forward import add_global_offres, forward_freq_segmented
from .io import read_volume, write_trajectory, write_volume
from .phantom import gen_field_map, gen_vessel_phantom
from .recon import DEFAULT_OVERSAMP, DEFAULT_WIDTH, grid_adjoint, regrid_to_trajectory
from .trajectory import scale_readout

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
#: desk-scale frequency grid; the full grid is forward.AUGMENT_FREQS
DESK_FREQS = np.linspace(-500.0, 500.0, 11)


def phantom_seeds(seed, n):
    """Independent 32-bit seeds for ``n`` phantoms derived from ``seed``."""
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(int(n))]


def _tag(x):
    # filesystem-safe, exact for the short decimals used here
    return repr(float(x)).replace("-", "m").replace(".", "p")


def build_corpus(n_phantoms, traj_short, scale_factors, freqs, seed, out_dir,
                 n_vessels=3, fieldmap_fmax=0.0, n_bins=8,
                 oversamp=DEFAULT_OVERSAMP, kernel_width=DEFAULT_WIDTH, log=None):
    """Simulate phantoms and write (input, reference) pairs plus a manifest.

    Parameters
    ----------
    n_phantoms : int
    traj_short : ConesTrajectory
        Short-readout trajectory; its grid size sets the volume shape.
    scale_factors, freqs : sequence of float
        Readout-duration factors and global off-resonance values (Hz).
    seed : int
    out_dir : path
    fieldmap_fmax : float
        If nonzero, each phantom also carries a smooth random field map of
        this peak magnitude during the short-readout simulation.

    Returns
    -------
    dict
        The manifest, also written to ``out_dir/manifest.json`` after every
        pair is on disk.
    """
    if int(n_phantoms) != n_phantoms or n_phantoms < 1:
        raise ValidationError("n_phantoms must be a positive integer")
    factors = [float(f) for f in scale_factors]
    freqs = [float(f) for f in freqs]
    if not factors or not freqs:
        raise ValidationError("scale_factors and freqs must be nonempty")
    if any(not f > 0 for f in factors):
        raise ValidationError("scale factors must be positive")
    shape = tuple(traj_short.grid_size)
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        os.remove(manifest_path)

    traj_paths = {}
    trajs = {}
    for fac in factors:
        trajs[fac] = scale_readout(traj_short, fac)
        name = f"traj_x{_tag(fac)}"
        write_trajectory(os.path.join(out_dir, name), trajs[fac])
        traj_paths[fac] = name

    entries = []
    for pid, pseed in enumerate(phantom_seeds(seed, n_phantoms)):
        img = gen_vessel_phantom(shape, n_vessels, pseed)
        fmap = gen_field_map(shape, fieldmap_fmax, seed=pseed) if fieldmap_fmax else None
        ks = forward_freq_segmented(img, fmap, traj_short, n_bins if fmap is not None else 1,
                                    oversamp, kernel_width)
        ref = grid_adjoint(ks, traj_short, shape, oversamp, kernel_width)
        pdir = f"phantom_{pid:04d}"
        os.makedirs(os.path.join(out_dir, pdir), exist_ok=True)
        ref_path = f"{pdir}/reference"
        write_volume(os.path.join(out_dir, ref_path), ref)
        for fac in factors:
            tl = trajs[fac]
            ks_long = regrid_to_trajectory(ks, traj_short, tl, shape, oversamp, kernel_width)
            for f0 in freqs:
                inp = grid_adjoint(add_global_offres(ks_long, tl, f0), tl, shape,
                                   oversamp, kernel_width)
                in_path = f"{pdir}/input_x{_tag(fac)}_f{_tag(f0)}"
                write_volume(os.path.join(out_dir, in_path), inp)
                entries.append({"phantom_id": pid, "seed": pseed, "factor": fac, "f0_hz": f0,
                                "input_path": in_path, "reference_path": ref_path,
                                "traj_path": traj_paths[fac]})
        if log:
            log(f"phantom {pid + 1}/{n_phantoms} done")

    manifest = {"version": MANIFEST_VERSION, "seed": int(seed), "shape": list(shape),
                "n_phantoms": int(n_phantoms), "scale_factors": factors, "freqs_hz": freqs,
                "fieldmap_fmax": float(fieldmap_fmax), "entries": entries}
    write_manifest(manifest_path, manifest)
    return manifest


def write_manifest(path, manifest):
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_manifest(path):
    with open(path) as fh:
        manifest = json.load(fh)
    if "entries" not in manifest:
        raise ValidationError(f"{path} is not a corpus manifest")
    return manifest


def phantom_ids(manifest):
    return sorted({int(e["phantom_id"]) for e in manifest["entries"]})


def split(manifest, train_fraction_by_phantom, seed):
    """Split a manifest by phantom so no phantom lands in both halves.

    The train count is ``round(fraction * n_phantoms)`` clipped to leave at
    least one phantom on each side.
    """
    frac = float(train_fraction_by_phantom)
    if not 0.0 < frac < 1.0:
        raise ValidationError("train fraction must be in (0, 1)")
    ids = phantom_ids(manifest)
    if len(ids) < 2:
        raise ValidationError("need at least 2 phantoms to split")
    n_train = min(max(int(round(frac * len(ids))), 1), len(ids) - 1)
    order = np.random.default_rng(int(seed)).permutation(len(ids))
    train_ids = {ids[i] for i in order[:n_train]}

    def subset(keep):
        out = {k: v for k, v in manifest.items() if k != "entries"}
        out["entries"] = [e for e in manifest["entries"] if (e["phantom_id"] in train_ids) == keep]
        out["phantom_ids"] = sorted({e["phantom_id"] for e in out["entries"]})
        out["split_seed"] = int(seed)
        return out

    return subset(True), subset(False)


def load_pairs(manifest, root, entries=None):
    """Read ``(input, reference)`` arrays for every (or the given) entry."""
    refs = {}
    pairs = []
    for e in manifest["entries"] if entries is None else entries:
        rp = e["reference_path"]
        if rp not in refs:
            refs[rp] = read_volume(os.path.join(root, rp)).data
        pairs.append((read_volume(os.path.join(root, e["input_path"])).data, refs[rp]))
    return pairs
