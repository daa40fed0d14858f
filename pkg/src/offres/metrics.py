"""Image-quality metrics, off-resonance sweeps and the iterated-application
diagnostic.

All metrics compare magnitude volumes, so a global phase difference between
``x`` and ``ref`` costs nothing.
"""
import csv
import json
import math
import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import as_complex_array
from .errors import ValidationError
from .forward import add_global_offres
from .recon import DEFAULT_OVERSAMP, DEFAULT_WIDTH, grid_adjoint

#: value reported by :func:`psnr` for identical inputs
PSNR_IDENTICAL = math.inf
METHODS = ("none", "autofocus", "net")
SWEEP_COLUMNS = ("f_hz", "method", "nrmse", "ssim", "psnr_db")
DEFAULT_SWEEP_FREQS = np.linspace(-1000.0, 1000.0, 41)


def _mags(x, ref):
    a = np.abs(as_complex_array(x))
    b = np.abs(as_complex_array(ref))
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def nrmse(x, ref):
    """``|| |x| - |ref| || / || |ref| ||``."""
    a, b = _mags(x, ref)
    denom = np.linalg.norm(b.ravel())
    if denom == 0:
        raise ValidationError("reference has zero norm")
    return float(np.linalg.norm((a - b).ravel()) / denom)


def psnr(x, ref):
    """Peak SNR in dB with peak ``max(|ref|)``; identical inputs give ``inf``."""
    a, b = _mags(x, ref)
    peak = float(b.max()) if b.size else 0.0
    if peak == 0:
        raise ValidationError("reference is all zero")
    rmse = math.sqrt(float(np.mean((a - b) ** 2)))
    if rmse == 0:
        return PSNR_IDENTICAL
    return 20.0 * math.log10(peak / rmse)


def _local_mean(arr, sigma, norm):
    return gaussian_filter(arr, sigma, mode="constant") / norm


def ssim(x, ref, window_sigma=1.5, k1=0.01, k2=0.03, dynamic_range=None):
    """Mean structural similarity with Gaussian-weighted local statistics.

    Windows are truncated at the volume edge and renormalized, so border
    voxels use only in-volume neighbours.  ``dynamic_range`` defaults to
    ``max(|ref|)``.
    """
    a, b = _mags(x, ref)
    L = float(b.max()) if dynamic_range is None else float(dynamic_range)
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2
    norm = gaussian_filter(np.ones_like(a), window_sigma, mode="constant")
    mu_a = _local_mean(a, window_sigma, norm)
    mu_b = _local_mean(b, window_sigma, norm)
    var_a = _local_mean(a * a, window_sigma, norm) - mu_a ** 2
    var_b = _local_mean(b * b, window_sigma, norm) - mu_b ** 2
    cov = _local_mean(a * b, window_sigma, norm) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    if c1 == 0 and c2 == 0:
        smap = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    else:
        smap = num / den
    return float(np.mean(smap))


def all_metrics(x, ref):
    return {"nrmse": nrmse(x, ref), "ssim": ssim(x, ref), "psnr_db": psnr(x, ref)}


def _resolve_correctors(correctors, net_params, af_cfg):
    from .autofocus import autofocus_correct
    from .network import apply as net_apply

    out = []
    for c in correctors:
        if isinstance(c, tuple):
            out.append(c)
            continue
        if c not in METHODS:
            raise ValidationError(f"unknown corrector {c!r}; expected one of {METHODS}")
        if c == "none":
            out.append((c, lambda unc, ks, traj: unc))
        elif c == "autofocus":
            out.append((c, lambda unc, ks, traj: autofocus_correct(
                ks, traj, unc.shape, af_cfg)[0].data))
        else:
            if net_params is None:
                raise ValidationError("corrector 'net' needs network parameters")
            out.append((c, lambda unc, ks, traj: net_apply(net_params, unc)))
    return sorted(out, key=lambda m: m[0])


def _fmt(v):
    return "inf" if v == math.inf else repr(float(v))


def sweep_eval(ks_ref, traj, correctors, freqs=DEFAULT_SWEEP_FREQS, out_csv=None,
               net_params=None, af_cfg=None, oversamp=DEFAULT_OVERSAMP,
               kernel_width=DEFAULT_WIDTH):
    """Metrics vs the on-resonance reconstruction over a global-frequency sweep.

    Parameters
    ----------
    ks_ref : KSpaceData
        On-resonance k-space on ``traj``.
    correctors : sequence
        Names from ``("none", "autofocus", "net")`` or ``(name, callable)``
        pairs where ``callable(uncorrected, ks, traj)`` returns an image.
    out_csv : path, optional
        Rows are written and flushed as they are computed.

    Returns
    -------
    list of dict
        One row per (frequency, method), sorted by frequency then method.
    """
    shape = tuple(traj.grid_size)
    methods = _resolve_correctors(correctors, net_params, af_cfg)
    ref = grid_adjoint(ks_ref, traj, shape, oversamp, kernel_width).data
    rows = []
    fh = writer = None
    if out_csv is not None:
        fh = open(out_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        fh.flush()
    try:
        for f in sorted(float(v) for v in freqs):
            ks_f = add_global_offres(ks_ref, traj, f)
            unc = grid_adjoint(ks_f, traj, shape, oversamp, kernel_width).data
            for name, fn in methods:
                img = fn(unc, ks_f, traj)
                row = {"f_hz": f, "method": name, **all_metrics(img, ref)}
                rows.append(row)
                if writer is not None:
                    writer.writerow([_fmt(f), name, _fmt(row["nrmse"]), _fmt(row["ssim"]),
                                     _fmt(row["psnr_db"])])
                    fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return rows


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("f_hz", "nrmse", "ssim", "psnr_db"):
            r[k] = float(r[k])
    return rows


def tidy_rows(rows):
    """Long-format ``(f_hz, method, metric, value)`` records for plotting."""
    out = []
    for r in rows:
        for k in ("nrmse", "ssim", "psnr_db"):
            out.append({"f_hz": r["f_hz"], "method": r["method"], "metric": k, "value": r[k]})
    return out


def write_tidy_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("f_hz", "method", "metric", "value"))
        for r in tidy_rows(rows):
            w.writerow((_fmt(r["f_hz"]), r["method"], r["metric"], _fmt(r["value"])))


def summarize_by_abs_freq(rows):
    """Mean metrics per ``(|f|, method)``, pooling +f and -f."""
    acc = {}
    for r in rows:
        key = (abs(r["f_hz"]), r["method"])
        acc.setdefault(key, []).append(r)
    out = {}
    for key, rs in sorted(acc.items()):
        out[key] = {k: float(np.mean([r[k] for r in rs])) for k in ("nrmse", "ssim", "psnr_db")}
    return out


def iterate_apply(p, vol, n=4, tile=64):
    """Feed a corrector its own output ``n`` times.

    Parameters
    ----------
    p : NetParams or callable
        Callables receive and return complex arrays.
    vol : ComplexVolume or array
    n : int
        Number of applications, >= 2.

    Returns
    -------
    (list of ndarray, ndarray, ndarray)
        Volumes ``v_0 .. v_n``, the NRMS of each consecutive difference
        ``||v_k - v_{k-1}|| / ||v_{k-1}||`` and the same values divided by
        the first one.
    """
    if int(n) != n or n < 2:
        raise ValidationError("n must be an integer >= 2")
    if callable(p):
        fn = p
    else:
        from .network import apply as net_apply

        def fn(v):
            return net_apply(p, v, tile=tile)
    vols = [as_complex_array(vol)]
    for _ in range(int(n)):
        vols.append(as_complex_array(fn(vols[-1])))
    diffs = []
    for prev, cur in zip(vols[:-1], vols[1:]):
        d = np.linalg.norm(prev.ravel())
        diffs.append(np.linalg.norm((cur - prev).ravel()) / d if d > 0 else 0.0)
    diffs = np.asarray(diffs)
    ratios = diffs / diffs[0] if diffs[0] > 0 else np.zeros_like(diffs)
    return vols, diffs, ratios


def write_metrics_json(path, metrics):
    """JSON dump with ``inf`` written as null."""
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump({k: (None if v == math.inf else v) for k, v in metrics.items()}, fh, indent=1)
    os.replace(tmp, path)
