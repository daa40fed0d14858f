"""Off-resonance signal model.

``s(t_j) = sum_r M(r) exp(-i 2 pi k_j.r / N) exp(-i 2 pi f(r) t_j)`` with the
field map ``f`` in Hz.  :func:`forward_exact` evaluates the double sum
directly; :func:`forward_freq_segmented` approximates it with one NUFFT per
frequency bin.
"""
import numpy as np

from . import kernels
from .data import KSpaceData, as_complex_array, as_real_array, as_values
from .errors import SizeGuardError, ValidationError
from .phantom import delta_phantom
from .recon import DEFAULT_OVERSAMP, DEFAULT_WIDTH, grid_adjoint, grid_forward

DEFAULT_MAX_COST = 2.5e8
#: augmentation frequencies (Hz)
AUGMENT_FREQS = np.linspace(-500.0, 500.0, 101)
#: autofocus / evaluation candidate range (Hz)
SWEEP_RANGE = (-1000.0, 1000.0)


def _prepare(img, fmap, traj):
    arr = as_complex_array(img)
    if arr.ndim != 3:
        raise ValidationError(f"image must be 3D, got shape {arr.shape}")
    f = np.zeros(arr.shape) if fmap is None else as_real_array(fmap)
    if f.shape != arr.shape:
        raise ValidationError(f"field map shape {f.shape} != image shape {arr.shape}")
    if tuple(traj.grid_size) != arr.shape:
        raise ValidationError(
            f"trajectory grid {tuple(traj.grid_size)} != image shape {arr.shape}")
    return arr, f


def _add_noise(values, noise_std, seed):
    if not noise_std:
        return values
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(values.size) + 1j * rng.standard_normal(values.size)
    return values + noise_std / np.sqrt(2.0) * noise


def forward_exact(img, fmap, traj, max_cost=DEFAULT_MAX_COST, noise_std=0.0, seed=None):
    """Direct evaluation of the signal equation (small-size oracle).

    Zero-valued voxels are skipped, so impulse images are cheap.  Raises
    :class:`SizeGuardError` when ``nonzero_voxels * n_samples > max_cost``.
    """
    arr, f = _prepare(img, fmap, traj)
    idx = np.flatnonzero(arr)
    cost = float(idx.size) * float(traj.n_samples)
    if cost > max_cost:
        raise SizeGuardError(f"direct sum cost {cost:.3g} exceeds limit {max_cost:.3g}")
    coords = np.stack(np.unravel_index(idx, arr.shape), axis=1).astype(np.float64)
    coords -= np.array([n // 2 for n in arr.shape], dtype=np.float64)
    values = kernels.direct_sum(
        np.ascontiguousarray(coords), np.ascontiguousarray(arr.ravel()[idx]),
        np.ascontiguousarray(f.ravel()[idx]), np.ascontiguousarray(traj.samples),
        np.ascontiguousarray(traj.timestamps), np.asarray(arr.shape, dtype=np.float64))
    return KSpaceData(_add_noise(values, noise_std, seed), traj.fingerprint)


def frequency_bins(fmap, n_bins):
    """Equal-width bins over ``[min, max]``; returns ``(centers, labels)``."""
    f = as_real_array(fmap)
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValidationError(f"n_bins must be an integer >= 1, got {n_bins}")
    lo, hi = float(f.min()), float(f.max())
    if hi == lo:
        return np.array([lo]), np.zeros(f.shape, dtype=np.intp)
    width = (hi - lo) / n_bins
    labels = np.clip(np.floor((f - lo) / width).astype(np.intp), 0, n_bins - 1)
    centers = lo + (np.arange(n_bins) + 0.5) * width
    return centers, labels


def forward_freq_segmented(img, fmap, traj, n_bins, oversamp=DEFAULT_OVERSAMP,
                           kernel_width=DEFAULT_WIDTH, noise_std=0.0, seed=None):
    """One type-2 NUFFT per frequency bin, each modulated at its bin center."""
    arr, f = _prepare(img, fmap, traj)
    centers, labels = frequency_bins(f, n_bins)
    t = traj.timestamps
    out = np.zeros(traj.n_samples, dtype=np.complex128)
    for b, fc in enumerate(centers):
        mask = labels == b
        if not mask.any():
            continue
        part = grid_forward(np.where(mask, arr, 0), traj, oversamp, kernel_width).values
        if fc != 0.0:
            part = part * np.exp(-2j * np.pi * fc * t)
        out += part
    return KSpaceData(_add_noise(out, noise_std, seed), traj.fingerprint)


def _check_aligned(values, traj):
    if values.size != traj.n_samples:
        raise ValidationError(
            f"k-space has {values.size} samples, trajectory has {traj.n_samples}")


def add_global_offres(ks, traj, f0):
    """Apply a spatially constant off-resonance ``f0`` (Hz)."""
    values = as_values(ks)
    _check_aligned(values, traj)
    if f0 == 0:
        return KSpaceData(values.copy(), traj.fingerprint)
    return KSpaceData(values * np.exp(-2j * np.pi * f0 * traj.timestamps), traj.fingerprint)


def demodulate_global(ks, traj, f):
    """Remove a global off-resonance ``f``; inverse of :func:`add_global_offres`."""
    values = as_values(ks)
    _check_aligned(values, traj)
    if f == 0:
        return KSpaceData(values.copy(), traj.fingerprint)
    return KSpaceData(values * np.exp(2j * np.pi * f * traj.timestamps), traj.fingerprint)


def psf_local(traj, location, f0, shape, oversamp=DEFAULT_OVERSAMP,
              kernel_width=DEFAULT_WIDTH):
    """Gridding reconstruction of an impulse at ``location`` under constant off-resonance."""
    shape = tuple(int(s) for s in shape)
    delta = delta_phantom(shape, location)
    fmap = np.full(shape, float(f0))
    ks = forward_exact(delta, fmap, traj)
    return grid_adjoint(ks, traj, shape, oversamp, kernel_width)


def psf_energy_radius(psf, location, fraction=0.9):
    """Smallest radius (voxels, periodic distance) holding ``fraction`` of PSF energy."""
    arr = as_complex_array(psf)
    d2 = np.zeros(arr.shape)
    for ax, (n, c) in enumerate(zip(arr.shape, location)):
        d = np.abs(np.arange(n) - c)
        d = np.minimum(d, n - d).astype(np.float64)
        sh = [1, 1, 1]
        sh[ax] = n
        d2 = d2 + (d ** 2).reshape(sh)
    e = np.abs(arr.ravel()) ** 2
    order = np.argsort(d2.ravel(), kind="stable")
    cum = np.cumsum(e[order])
    pos = int(np.searchsorted(cum, fraction * cum[-1]))
    return float(np.sqrt(d2.ravel()[order][min(pos, cum.size - 1)]))
