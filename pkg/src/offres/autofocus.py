"""Blind off-resonance correction by exhaustive frequency search.

Each candidate frequency is demodulated from the k-space data and
reconstructed; per voxel, the candidate with the smallest local imaginary
energy (after removing low-frequency phase) wins.
"""
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter, uniform_filter

from .data import ComplexVolume, FieldMap, as_complex_array, as_values
from .errors import ValidationError
from .forward import add_global_offres, demodulate_global
from .recon import DEFAULT_OVERSAMP, DEFAULT_WIDTH, grid_adjoint, grid_forward


@dataclass(frozen=True)
class AutofocusConfig:
    f_min: float = -1000.0
    f_max: float = 1000.0
    n_freqs: int = 41
    metric_window: int = 4
    lowpass_sigma: float = 1.5
    fieldmap_smooth_sigma: float = 2.0
    mask_fraction: float = 0.05
    #: candidate volumes kept in memory; None keeps all, else assembly recomputes
    max_resident: int = None
    oversamp: float = DEFAULT_OVERSAMP
    kernel_width: float = DEFAULT_WIDTH

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise ValidationError("f_min must be < f_max")
        if int(self.n_freqs) != self.n_freqs or self.n_freqs < 2:
            raise ValidationError("n_freqs must be an integer >= 2")
        if int(self.metric_window) != self.metric_window or self.metric_window < 0:
            raise ValidationError("metric_window must be a nonnegative integer")
        if self.lowpass_sigma < 0 or self.fieldmap_smooth_sigma < 0:
            raise ValidationError("smoothing widths must be nonnegative")
        if self.max_resident is not None and self.max_resident < 1:
            raise ValidationError("max_resident must be >= 1")

    def frequencies(self):
        return np.linspace(self.f_min, self.f_max, int(self.n_freqs))

    @property
    def spacing(self):
        return (self.f_max - self.f_min) / (self.n_freqs - 1)

    def as_dict(self):
        return asdict(self)


def _smooth_complex(arr, sigma):
    if sigma == 0:
        return arr
    return (gaussian_filter(arr.real, sigma, mode="nearest")
            + 1j * gaussian_filter(arr.imag, sigma, mode="nearest"))


def metric_map(img, lowpass_sigma=1.5, window=4):
    """Local sum of ``|imag|`` after removing the low-pass phase.

    The window is a cube of half-width ``window`` voxels, zero-padded at the
    borders.
    """
    arr = as_complex_array(img)
    phase = np.angle(_smooth_complex(arr, lowpass_sigma))
    resid = np.abs((arr * np.exp(-1j * phase)).imag)
    if window == 0:
        return resid
    size = 2 * int(window) + 1
    return uniform_filter(resid, size=size, mode="constant") * float(size ** 3)


def _search_order(freqs):
    # smaller |f| first so strict '<' keeps it on ties
    return sorted(range(len(freqs)), key=lambda i: (abs(freqs[i]), freqs[i]))


def _masked_smooth(fmap, mask, sigma):
    if sigma == 0:
        return np.where(mask, fmap, 0.0)
    num = gaussian_filter(np.where(mask, fmap, 0.0), sigma, mode="constant")
    den = gaussian_filter(mask.astype(np.float64), sigma, mode="constant")
    out = np.zeros_like(fmap)
    ok = mask & (den > 1e-12)
    out[ok] = num[ok] / den[ok]
    return out


def _fill_from_mask(fmap, mask):
    # unmasked voxels borrow the nearest masked estimate for assembly only
    if mask.all() or not mask.any():
        return fmap
    idx = distance_transform_edt(~mask, return_distances=False, return_indices=True)
    return fmap[tuple(idx)]


def _nearest_index(freqs, values):
    freqs = np.asarray(freqs)
    d = np.abs(values[..., None] - freqs)
    # ties resolve to the candidate with smaller |f|
    penalty = np.abs(freqs) * 1e-9 / (np.abs(freqs).max() + 1.0)
    return np.argmin(d + penalty, axis=-1)


def autofocus_correct(ks, traj, shape, cfg=None, trace=None):
    """Per-voxel frequency selection and image assembly.

    Parameters
    ----------
    ks : KSpaceData or array
    traj : ConesTrajectory
    shape : tuple of 3 ints
    cfg : AutofocusConfig, optional
    trace : list, optional
        If given, ``(frequency, mean metric)`` pairs are appended in
        candidate order.

    Returns
    -------
    (ComplexVolume, FieldMap)
        The corrected image and the smoothed frequency map used to assemble it.
    """
    cfg = cfg or AutofocusConfig()
    shape = tuple(int(s) for s in shape)
    values = as_values(ks)
    f_lim = max(abs(cfg.f_min), abs(cfg.f_max))
    if not np.any(values):
        return ComplexVolume(np.zeros(shape, dtype=np.complex128)), FieldMap(np.zeros(shape), f_lim)

    def recon(f):
        return grid_adjoint(demodulate_global(values, traj, f), traj, shape,
                            cfg.oversamp, cfg.kernel_width).data

    freqs = cfg.frequencies()
    resident = cfg.max_resident is None or cfg.max_resident >= len(freqs)
    images = {}
    best = np.full(shape, np.inf)
    best_idx = np.zeros(shape, dtype=np.intp)
    best_mag = np.zeros(shape)
    means = {}
    for i in _search_order(freqs):
        img = recon(freqs[i])
        m = metric_map(img, cfg.lowpass_sigma, cfg.metric_window)
        better = m < best
        best[better] = m[better]
        best_idx[better] = i
        best_mag[better] = np.abs(img[better])
        means[i] = float(m.mean())
        if resident:
            images[i] = img
    if trace is not None:
        trace.extend((float(freqs[i]), means[i]) for i in range(len(freqs)))

    # mask on the magnitude of each voxel's selected candidate; the blurred
    # on-resonance image drops signal that blur has spread thin
    mask = best_mag >= cfg.mask_fraction * best_mag.max()
    fmap = _masked_smooth(freqs[best_idx], mask, cfg.fieldmap_smooth_sigma)

    pick = _nearest_index(freqs, _fill_from_mask(fmap, mask))
    out = np.zeros(shape, dtype=np.complex128)
    for i in np.unique(pick):
        img = images[i] if resident else recon(freqs[i])
        sel = pick == i
        out[sel] = img[sel]
    return ComplexVolume(out), FieldMap(fmap, f_lim)


def estimate_consistency_fieldmap(corrected, uncorrected, traj, cfg=None, smooth=False):
    """Frequency map explaining ``uncorrected`` as a blurred ``corrected``.

    For each candidate ``f`` the corrected image is re-blurred by a global
    off-resonance ``f``; per voxel the ``f`` minimizing the autofocus metric
    of (re-blurred - uncorrected) is kept.  Voxels below the magnitude mask
    of ``uncorrected`` are set to 0.
    """
    cfg = cfg or AutofocusConfig()
    corr = as_complex_array(corrected)
    unc = as_complex_array(uncorrected)
    if corr.shape != unc.shape:
        raise ValidationError(f"shape mismatch {corr.shape} vs {unc.shape}")
    shape = corr.shape
    f_lim = max(abs(cfg.f_min), abs(cfg.f_max))
    base_ks = grid_forward(corr, traj, cfg.oversamp, cfg.kernel_width)
    freqs = cfg.frequencies()
    best = np.full(shape, np.inf)
    best_idx = np.zeros(shape, dtype=np.intp)
    for i in _search_order(freqs):
        sim = grid_adjoint(add_global_offres(base_ks, traj, freqs[i]), traj, shape,
                           cfg.oversamp, cfg.kernel_width).data
        m = metric_map(sim - unc, cfg.lowpass_sigma, cfg.metric_window)
        better = m < best
        best[better] = m[better]
        best_idx[better] = i
    mag = np.abs(unc)
    mask = mag >= cfg.mask_fraction * mag.max() if mag.max() > 0 else np.zeros(shape, bool)
    sigma = cfg.fieldmap_smooth_sigma if smooth else 0.0
    return FieldMap(_masked_smooth(freqs[best_idx], mask, sigma), f_lim)
