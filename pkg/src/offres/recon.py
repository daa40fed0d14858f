"""Gridding reconstruction with a Kaiser-Bessel kernel.

Image-domain voxel coordinates are ``r = index - N//2`` per axis and k-space
samples are in cycles/FOV, so the Fourier pair used throughout is
``exp(-i 2 pi k.r / N)``.  The adjoint is scaled by ``1/prod(N)`` so that with
well-normalized density compensation a constant image survives the
forward/adjoint round trip with unit mean.
"""
from functools import lru_cache

import numpy as np
from scipy.special import i0

from . import kernels
from .data import ComplexVolume, KSpaceData, as_complex_array, as_values
from .errors import SizeGuardError, ValidationError

DEFAULT_OVERSAMP = 2.0
DEFAULT_WIDTH = 4.0
_TABLE_PER_UNIT = 2048


def kb_beta(width, oversamp):
    """Kaiser-Bessel shape parameter for a given width and oversampling."""
    return np.pi * np.sqrt((width / oversamp) ** 2 * (oversamp - 0.5) ** 2 - 0.8)


@lru_cache(maxsize=32)
def kb_table(width, oversamp):
    """Lookup table of the peak-normalized kernel on ``[0, width/2]``.

    Returns ``(table, scale)``; ``table[i]`` is the kernel at ``u = i/scale``.
    One trailing zero guards the linear interpolation at ``u = width/2``.
    """
    half = 0.5 * width
    n = int(np.ceil(_TABLE_PER_UNIT * half))
    u = np.linspace(0.0, half, n + 1)
    beta = kb_beta(width, oversamp)
    arg = np.sqrt(np.clip(1.0 - (u / half) ** 2, 0.0, None))
    table = np.append(i0(beta * arg) / i0(beta), 0.0)
    table.setflags(write=False)
    return table, n / half


def kb_deapod(n, g, width, oversamp):
    """Analytic Fourier transform of the kernel at the ``n`` central image indices."""
    beta = kb_beta(width, oversamp)
    x = np.arange(n) - n // 2
    z = beta ** 2 - (np.pi * width * x / g) ** 2
    out = np.empty(n)
    pos = z > 0
    sz = np.sqrt(np.abs(z))
    out[pos] = np.sinh(sz[pos]) / sz[pos]
    neg = z < 0
    out[neg] = np.sin(sz[neg]) / sz[neg]
    out[z == 0] = 1.0
    return width * out / i0(beta)


def oversampled_shape(shape, oversamp):
    return tuple(int(2 * np.ceil(oversamp * n / 2.0)) for n in shape)


def _check_params(oversamp, kernel_width):
    if oversamp < 1.25:
        raise ValidationError(f"oversamp must be >= 1.25, got {oversamp}")
    if kernel_width < 2:
        raise ValidationError(f"kernel_width must be >= 2, got {kernel_width}")


def _check_traj(traj, shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3:
        raise ValidationError(f"shape must have 3 entries, got {shape}")
    if tuple(traj.grid_size) != shape:
        raise ValidationError(
            f"trajectory grid size {tuple(traj.grid_size)} does not match shape {shape}")
    if traj.n_samples == 0:
        raise ValidationError("empty trajectory")
    return shape


def _grid_coords(traj, shape, gshape):
    scale = np.array([g / n for g, n in zip(gshape, shape)], dtype=np.float64)
    return np.ascontiguousarray(traj.samples * scale[None, :])


def _deapod3(shape, gshape, width, oversamp):
    dx, dy, dz = (kb_deapod(n, g, width, oversamp) for n, g in zip(shape, gshape))
    return dx[:, None, None] * dy[None, :, None] * dz[None, None, :]


def _crop_slices(shape, gshape):
    return tuple(slice(g // 2 - n // 2, g // 2 - n // 2 + n) for n, g in zip(shape, gshape))


def _adjoint_raw(values, traj, shape, oversamp, kernel_width):
    # exact adjoint of grid_forward: sum_j y_j exp(+i 2 pi k_j.r / N)
    gshape = oversampled_shape(shape, oversamp)
    table, tscale = kb_table(float(kernel_width), float(oversamp))
    coords = _grid_coords(traj, shape, gshape)
    grid = kernels.spread(coords, np.ascontiguousarray(values, dtype=np.complex128),
                          gshape, float(kernel_width), table, tscale)
    img = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(grid))) * np.prod(gshape)
    img = img[_crop_slices(shape, gshape)]
    return img / _deapod3(shape, gshape, kernel_width, oversamp)


def grid_adjoint(ks, traj, shape, oversamp=DEFAULT_OVERSAMP,
                 kernel_width=DEFAULT_WIDTH, use_dcf=True):
    """Density-compensated gridding reconstruction.

    Parameters
    ----------
    ks : KSpaceData or array
        Samples aligned with ``traj``.
    traj : ConesTrajectory
    shape : tuple of 3 ints
        Output matrix; must equal ``traj.grid_size``.
    oversamp, kernel_width : float
        Grid oversampling factor and kernel width in oversampled grid units.
    use_dcf : bool
        Multiply samples by ``traj.dcf`` before spreading.

    Returns
    -------
    ComplexVolume
    """
    _check_params(oversamp, kernel_width)
    shape = _check_traj(traj, shape)
    values = as_values(ks)
    if values.size != traj.n_samples:
        raise ValidationError(
            f"k-space has {values.size} samples, trajectory has {traj.n_samples}")
    if use_dcf:
        values = values * traj.dcf
    img = _adjoint_raw(values, traj, shape, oversamp, kernel_width)
    return ComplexVolume(img / np.prod(shape))


def grid_adjoint_nodcf(ks, traj, shape, oversamp=DEFAULT_OVERSAMP,
                       kernel_width=DEFAULT_WIDTH):
    """Unweighted, unnormalized adjoint of :func:`grid_forward`."""
    _check_params(oversamp, kernel_width)
    shape = _check_traj(traj, shape)
    values = as_values(ks)
    if values.size != traj.n_samples:
        raise ValidationError("k-space / trajectory length mismatch")
    return ComplexVolume(_adjoint_raw(values, traj, shape, oversamp, kernel_width))


def grid_forward(img, traj, oversamp=DEFAULT_OVERSAMP, kernel_width=DEFAULT_WIDTH):
    """Type-2 NUFFT: ``s_j ~= sum_r img(r) exp(-i 2 pi k_j.r / N)``. No dcf."""
    _check_params(oversamp, kernel_width)
    arr = as_complex_array(img)
    shape = _check_traj(traj, arr.shape)
    gshape = oversampled_shape(shape, oversamp)
    pre = arr / _deapod3(shape, gshape, kernel_width, oversamp)
    padded = np.zeros(gshape, dtype=np.complex128)
    padded[_crop_slices(shape, gshape)] = pre
    grid = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(padded)))
    table, tscale = kb_table(float(kernel_width), float(oversamp))
    coords = _grid_coords(traj, shape, gshape)
    values = kernels.interp(np.ascontiguousarray(grid), coords, float(kernel_width),
                            table, tscale)
    return KSpaceData(values, traj.fingerprint)


def naive_adjoint_oracle(ks, traj, shape, max_cost=2e9):
    """Direct conjugate-phase sum ``(1/prod(N)) sum_j dcf_j s_j exp(+i 2 pi k_j.r/N)``.

    Only for small problems; ``max_cost`` bounds ``n_samples * prod(shape)``.
    """
    shape = _check_traj(traj, shape)
    values = as_values(ks)
    if values.size != traj.n_samples:
        raise ValidationError("k-space / trajectory length mismatch")
    cost = float(values.size) * float(np.prod(shape))
    if cost > max_cost:
        raise SizeGuardError(f"naive adjoint cost {cost:.3g} exceeds limit {max_cost:.3g}")
    w = values * traj.dcf
    out = np.zeros(shape, dtype=np.complex128)
    axes = [np.arange(n) - n // 2 for n in shape]
    chunk = 4096
    for s in range(0, values.size, chunk):
        k = traj.samples[s:s + chunk]
        ex, ey, ez = (np.exp(2j * np.pi * np.outer(k[:, d], axes[d]) / shape[d])
                      for d in range(3))
        out += np.einsum("j,jx,jy,jz->xyz", w[s:s + chunk], ex, ey, ez, optimize=True)
    return ComplexVolume(out / np.prod(shape))


def regrid_to_trajectory(ks_src, traj_src, traj_dst, shape,
                         oversamp=DEFAULT_OVERSAMP, kernel_width=DEFAULT_WIDTH,
                         exact_when_coincident=True):
    """Move k-space data from one trajectory onto another.

    Reconstructs with :func:`grid_adjoint` on ``traj_src`` and resamples with
    :func:`grid_forward` on ``traj_dst``. When both trajectories share sample
    positions (readout-duration scaling) the values are passed through
    unchanged unless ``exact_when_coincident`` is False.
    """
    values = as_values(ks_src)
    if tuple(traj_src.grid_size) != tuple(traj_dst.grid_size):
        raise ValidationError("source and destination grid sizes differ")
    if values.size != traj_src.n_samples:
        raise ValidationError("k-space / source trajectory length mismatch")
    if exact_when_coincident and traj_src.n_samples == traj_dst.n_samples and \
            np.array_equal(traj_src.samples, traj_dst.samples):
        return KSpaceData(values.copy(), traj_dst.fingerprint)
    img = grid_adjoint(values, traj_src, shape, oversamp, kernel_width)
    return grid_forward(img, traj_dst, oversamp, kernel_width)
