"""CFL-style array files and trajectory / k-space persistence.

A CFL pair is ``<base>.hdr`` (``# Dimensions`` then space-separated sizes)
and ``<base>.cfl`` (interleaved real/imag little-endian float32, first
dimension fastest).  Extra ``# Key`` sections in the header are preserved on
read as metadata.
"""
import json
import os

import numpy as np

from .data import ComplexVolume, FieldMap, KSpaceData, as_values
from .errors import FormatError
from .trajectory import ConesTrajectory


def _base(path):
    path = os.fspath(path)
    for ext in (".cfl", ".hdr"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path


def _write_header(base, dims, extra=None):
    lines = ["# Dimensions", " ".join(str(int(d)) for d in dims)]
    for key, value in (extra or {}).items():
        lines += [f"# {key}", str(value)]
    with open(base + ".hdr", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_header(path):
    """Return ``(dims, metadata)`` from a ``.hdr`` file."""
    base = _base(path)
    try:
        with open(base + ".hdr") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
    except FileNotFoundError:
        raise FormatError(f"missing header {base}.hdr") from None
    sections = {}
    key = None
    for ln in lines:
        if ln.startswith("#"):
            key = ln[1:].strip()
            sections[key] = []
        elif key is not None and ln.strip():
            sections[key].append(ln.strip())
    if not sections.get("Dimensions"):
        raise FormatError(f"{base}.hdr has no '# Dimensions' section")
    try:
        dims = tuple(int(v) for v in sections.pop("Dimensions")[0].split())
    except ValueError:
        raise FormatError(f"garbled dimensions in {base}.hdr") from None
    if not dims or any(d < 0 for d in dims):
        raise FormatError(f"invalid dimensions {dims} in {base}.hdr")
    return dims, {k: "\n".join(v) for k, v in sections.items()}


def cfl_write(path, array, extra=None):
    """Write a complex array (or ComplexVolume / FieldMap / KSpaceData)."""
    if isinstance(array, (ComplexVolume, FieldMap)):
        array = array.data
    elif isinstance(array, KSpaceData):
        array = array.values[None, :]
    arr = np.asarray(array)
    base = _base(path)
    _write_header(base, arr.shape, extra)
    np.asarray(arr, dtype="<c8").ravel(order="F").tofile(base + ".cfl")


def cfl_read(path, with_meta=False):
    """Read a CFL pair into a complex64 array with the header's shape."""
    base = _base(path)
    dims, meta = read_header(base)
    expected = int(np.prod(dims)) * 8
    try:
        size = os.path.getsize(base + ".cfl")
    except FileNotFoundError:
        raise FormatError(f"missing data file {base}.cfl") from None
    if size != expected:
        raise FormatError(f"{base}.cfl has {size} bytes, header implies {expected}")
    data = np.fromfile(base + ".cfl", dtype="<c8").reshape(dims, order="F")
    return (data, meta) if with_meta else data


def write_volume(path, vol):
    spacing = getattr(vol, "spacing", (1.0, 1.0, 1.0))
    cfl_write(path, vol, {"Spacing": " ".join(repr(float(s)) for s in spacing)})


def read_volume(path):
    data, meta = cfl_read(path, with_meta=True)
    spacing = tuple(float(s) for s in meta.get("Spacing", "1 1 1").split())
    return ComplexVolume(data.astype(np.complex128), spacing)


def write_fieldmap(path, fmap):
    cfl_write(path, np.asarray(fmap.data if isinstance(fmap, FieldMap) else fmap),
              {"Units": "Hz"})


def read_fieldmap(path):
    return FieldMap(cfl_read(path).real.astype(np.float64))


def _traj_base(path):
    base = _base(path)
    for ext in (".json", ".traj"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    return base


def write_trajectory(path, traj):
    """Write ``<base>.traj.cfl/.hdr`` (float32 [5, n]) and ``<base>.traj.json``."""
    base = _traj_base(path) + ".traj"
    rows = np.vstack([traj.samples.T, traj.timestamps[None, :], traj.dcf[None, :]])
    _write_header(base, rows.shape, {"Type": "float32", "Rows": "kx ky kz t_seconds dcf"})
    np.asarray(rows, dtype="<f4").ravel(order="F").tofile(base + ".cfl")
    side = {"interleaf_counts": traj.interleaf_counts, "grid_size": list(traj.grid_size),
            "fov_cm": traj.fov_cm, "t_read": traj.t_read}
    with open(base + ".json", "w") as fh:
        json.dump(side, fh)
    return base


def read_trajectory(path):
    base = _traj_base(path) + ".traj"
    dims, _ = read_header(base)
    if len(dims) != 2 or dims[0] != 5:
        raise FormatError(f"trajectory header must be '5 n', got {dims}")
    expected = dims[0] * dims[1] * 4
    size = os.path.getsize(base + ".cfl") if os.path.exists(base + ".cfl") else -1
    if size != expected:
        raise FormatError(f"{base}.cfl has {size} bytes, header implies {expected}")
    rows = np.fromfile(base + ".cfl", dtype="<f4").reshape(dims, order="F").astype(np.float64)
    try:
        with open(base + ".json") as fh:
            side = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"missing sidecar {base}.json") from None
    counts = side["interleaf_counts"]
    if sum(counts) != dims[1]:
        raise FormatError("interleaf counts do not sum to the sample count")
    interleaf = np.repeat(np.arange(len(counts)), counts)
    return ConesTrajectory(rows[:3].T, rows[3], interleaf, rows[4], side["grid_size"],
                           side["t_read"], side.get("fov_cm", 24.0))


def write_kspace(path, ks, traj_path=None):
    """Write ``[1, n]`` k-space; ``traj_path`` is stored relative to the file."""
    extra = {}
    base = _base(path)
    if traj_path is not None:
        tp = _traj_base(traj_path)
        extra["Trajectory"] = os.path.relpath(os.path.abspath(tp),
                                              os.path.dirname(os.path.abspath(base)))
    if isinstance(ks, KSpaceData) and ks.traj_ref:
        extra["TrajectoryRef"] = ks.traj_ref
    cfl_write(base, as_values(ks)[None, :], extra)


def read_kspace(path):
    """Return ``(KSpaceData, trajectory base path or None)``."""
    base = _base(path)
    data, meta = cfl_read(base, with_meta=True)
    if data.ndim != 2 or data.shape[0] != 1:
        raise FormatError(f"k-space must have dims '1 n', got {data.shape}")
    ks = KSpaceData(data[0].astype(np.complex128), meta.get("TrajectoryRef", ""))
    tp = meta.get("Trajectory")
    if tp is not None and not os.path.isabs(tp):
        tp = os.path.join(os.path.dirname(os.path.abspath(base)), tp)
    return ks, tp
