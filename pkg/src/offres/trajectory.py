"""3D cones trajectories: generation, readout scaling, density compensation
and gradient/slew feasibility checks.

Sample positions are in cycles/FOV (the grid's Nyquist edge is ``N/2``) and
timestamps in seconds from the start of each interleaf.
"""
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

GAMMA_BAR = 42.577478518e6  # Hz/T, proton
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

#: default short/long readout pair in seconds
T_READ_SHORT = 1.18e-3
T_READ_LONG = 3.35e-3
#: readout-duration factors applied to the short readout for augmentation
AUGMENT_FACTORS = (1.5, 2.0, 2.5, 3.0)


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class ConesTrajectory:
    """Non-Cartesian sample locations with readout timestamps and dcf.

    Timestamps are stored as a base array plus a cumulative time scale so
    that repeated :func:`scale_readout` calls compose exactly.
    """

    def __init__(self, samples, timestamps, interleaf_index, dcf, grid_size,
                 t_read, fov_cm=24.0, time_scale=1.0, validate=True):
        self.samples = _readonly(np.reshape(samples, (-1, 3)), np.float64)
        self._base_t = _readonly(np.ravel(timestamps), np.float64)
        self.interleaf_index = _readonly(np.ravel(interleaf_index), np.int64)
        self.dcf = _readonly(np.ravel(dcf), np.float64)
        if np.ndim(grid_size) == 0:
            grid_size = (grid_size,) * 3
        self.grid_size = tuple(int(g) for g in grid_size)
        self._base_t_read = float(t_read)
        self.fov_cm = float(fov_cm)
        self.time_scale = float(time_scale)
        self._fingerprint = None
        if validate:
            self.validate()

    # --- derived quantities -------------------------------------------------
    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def timestamps(self):
        return self._base_t * self.time_scale

    @property
    def t_read(self):
        return self._base_t_read * self.time_scale

    @property
    def k_max(self):
        return min(self.grid_size) / 2.0

    @property
    def interleaf_counts(self):
        if self.n_samples == 0:
            return []
        starts = np.flatnonzero(np.diff(self.interleaf_index)) + 1
        bounds = np.concatenate(([0], starts, [self.n_samples]))
        return [int(b - a) for a, b in zip(bounds[:-1], bounds[1:])]

    def interleaf_slices(self):
        pos = 0
        for c in self.interleaf_counts:
            yield slice(pos, pos + c)
            pos += c

    @property
    def fingerprint(self):
        """Short content hash used to bind k-space data to its trajectory."""
        if self._fingerprint is None:
            h = hashlib.sha1()
            for a in (self.samples, self.timestamps, self.dcf):
                h.update(np.ascontiguousarray(a).tobytes())
            h.update(repr(self.grid_size).encode())
            self._fingerprint = h.hexdigest()[:16]
        return self._fingerprint

    def replace(self, validate=True, **kw):
        args = dict(samples=self.samples, timestamps=self._base_t,
                    interleaf_index=self.interleaf_index, dcf=self.dcf,
                    grid_size=self.grid_size, t_read=self._base_t_read,
                    fov_cm=self.fov_cm, time_scale=self.time_scale)
        args.update(kw)
        return ConesTrajectory(validate=validate, **args)

    def validate(self):
        n = self.n_samples
        if not (self._base_t.size == self.interleaf_index.size == self.dcf.size == n):
            raise ValidationError("samples, timestamps, interleaf_index and dcf lengths differ")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("non-finite sample positions")
        if not np.all(np.isfinite(self.dcf)) or np.any(self.dcf < 0):
            raise ValidationError("dcf must be finite and nonnegative")
        radius = np.linalg.norm(self.samples, axis=1) if n else np.zeros(0)
        # float32 storage on disk can round |k| up by ~1 ulp
        if n and radius.max() > self.k_max * (1 + 1e-6):
            raise ValidationError(f"|k| exceeds k_max={self.k_max}")
        if n and np.any(np.diff(self.interleaf_index) < 0):
            raise ValidationError("interleaf_index must be non-decreasing")
        t = self._base_t
        for sl in self.interleaf_slices():
            ti = t[sl]
            if ti[0] != 0.0:
                raise ValidationError("each interleaf must start at t=0")
            if np.any(np.diff(ti) <= 0):
                raise ValidationError("timestamps must increase strictly within an interleaf")
        return self

    def __eq__(self, other):
        if not isinstance(other, ConesTrajectory):
            return NotImplemented
        return (self.grid_size == other.grid_size and self.t_read == other.t_read
                and self.fov_cm == other.fov_cm
                and np.array_equal(self.samples, other.samples)
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.interleaf_index, other.interleaf_index)
                and np.array_equal(self.dcf, other.dcf))

    __hash__ = None

    def __repr__(self):
        return (f"ConesTrajectory(n_samples={self.n_samples}, "
                f"interleaves={len(self.interleaf_counts)}, grid={self.grid_size}, "
                f"t_read={self.t_read * 1e3:.3f} ms)")


def dc_gain(samples, dcf, grid_size):
    """Mean of the dcf-weighted reconstruction of an all-ones image.

    For an N-voxel cube the forward transform of ones is the product of
    per-axis Dirichlet sums ``D(k)``; the mean of its adjoint reconstruction
    is ``sum_j dcf_j |D(k_j)|^2 / prod(N)^2``.
    """
    grid_size = tuple(grid_size)
    prod = np.ones(samples.shape[0])
    for d, n in enumerate(grid_size):
        r = np.arange(n) - n // 2
        dk = np.exp(-2j * np.pi * np.outer(samples[:, d], r) / n).sum(axis=1)
        prod *= np.abs(dk) ** 2
    return float(np.dot(dcf, prod) / float(np.prod(grid_size)) ** 2)


def _normalized_dcf(samples, dcf, grid_size):
    g = dc_gain(samples, dcf, grid_size)
    if not g > 0:
        raise ValidationError("density compensation has zero DC gain")
    return dcf / g


def _check_positive_int(name, v, minimum=1):
    if int(v) != v or v < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {v}")
    return int(v)


def generate_cones(n_cones, interleaves_per_cone, samples_per_interleaf, t_read,
                   twist, grid_size, fov_cm=24.0):
    """Conical-spiral trajectory with linear radial growth.

    Cone ``c`` sits at ``cos(theta_c) = -1 + (2c + 1)/n_cones``; each
    interleaf follows ``k(t) = r(t) (sin th cos phi, sin th sin phi, cos th)``
    with ``r = k_max t/T`` and ``phi = phi0 + 2 pi twist t/T``, and the start
    azimuths ``phi0`` advance by the golden angle across all interleaves.
    """
    n_cones = _check_positive_int("n_cones", n_cones)
    n_il = _check_positive_int("interleaves_per_cone", interleaves_per_cone)
    n_s = _check_positive_int("samples_per_interleaf", samples_per_interleaf, 2)
    grid_size = int(grid_size)
    if grid_size < 8 or grid_size % 2:
        raise ValidationError(f"grid_size must be even and >= 8, got {grid_size}")
    if not t_read > 0:
        raise ValidationError(f"t_read must be positive, got {t_read}")
    if not np.isfinite(twist):
        raise ValidationError("twist must be finite")

    k_max = grid_size / 2.0
    frac = np.arange(n_s) / (n_s - 1)
    radius = k_max * frac
    radius[-1] = k_max
    times = t_read * frac

    cos_th = -1.0 + (2.0 * np.arange(n_cones) + 1.0) / n_cones
    sin_th = np.sqrt(1.0 - cos_th ** 2)
    n_total = n_cones * n_il
    phi0 = np.mod(np.arange(n_total) * GOLDEN_ANGLE, 2 * np.pi).reshape(n_cones, n_il)
    phi = phi0[:, :, None] + 2 * np.pi * twist * frac[None, None, :]

    kx = radius * sin_th[:, None, None] * np.cos(phi)
    ky = radius * sin_th[:, None, None] * np.sin(phi)
    kz = np.broadcast_to(radius * cos_th[:, None, None], kx.shape)
    samples = np.stack([kx, ky, kz], axis=-1).reshape(-1, 3)

    # shell volume per sample: 4 pi r^2 dr / (number of interleaves)
    dr = k_max / (n_s - 1)
    w = 4 * np.pi * radius ** 2 * dr / n_total
    nonzero = np.sort(w[w > 0])
    w[0] = nonzero[:2].mean()
    dcf = np.tile(w, n_total)

    timestamps = np.tile(times, n_total)
    interleaf = np.repeat(np.arange(n_total), n_s)
    grid = (grid_size,) * 3
    return ConesTrajectory(samples, timestamps, interleaf,
                           _normalized_dcf(samples, dcf, grid), grid, t_read, fov_cm)


def scale_readout(traj, factor):
    """Stretch readout time by ``factor`` keeping positions and dcf fixed."""
    if not factor > 0:
        raise ValidationError(f"factor must be positive, got {factor}")
    # positive scaling cannot break any invariant
    return traj.replace(validate=False, time_scale=traj.time_scale * factor)


def augmentation_family(traj, factors=AUGMENT_FACTORS):
    """Trajectories of increasing readout duration built from ``traj``."""
    return [scale_readout(traj, f) for f in factors]


def shell_volume_dcf(traj):
    """Exact volume-element weights for linear-radial trajectories.

    A sample at radius ``j dr`` owns the spherical shell between the
    neighbouring half-steps (a ball of radius ``dr/2`` at the centre, a half
    shell at ``k_max``) shared equally among interleaves.  Unlike the
    generator's rule these weights are not DC-renormalized, so they integrate
    smooth spectra without bias.
    """
    counts = traj.interleaf_counts
    if not counts or len(set(counts)) != 1 or counts[0] < 2:
        raise ValidationError("shell_volume_dcf needs equal-length interleaves of >= 2 samples")
    n_s = counts[0]
    dr = traj.k_max / (n_s - 1)
    j = np.rint(np.linalg.norm(traj.samples, axis=1) / dr)
    lo = np.maximum(j - 0.5, 0.0) * dr
    hi = np.minimum(j + 0.5, n_s - 1) * dr
    return traj.replace(validate=False, dcf=4.0 / 3.0 * np.pi * (hi ** 3 - lo ** 3) / len(counts))


def refine_dcf_pipemenon(traj, iterations=10, kernel_width=4.0, oversamp=2.0,
                         eps=1e-12):
    """Iterative density compensation ``w <- w / (w * C)(k_j)``.

    The convolution with the gridding kernel ``C`` is evaluated by spreading
    the weights onto the oversampled grid and interpolating back.  The result
    is rescaled to unit DC gain.
    """
    from . import kernels
    from .recon import kb_table, oversampled_shape

    iterations = _check_positive_int("iterations", iterations)
    shape = traj.grid_size
    gshape = oversampled_shape(shape, oversamp)
    table, tscale = kb_table(float(kernel_width), float(oversamp))
    scale = np.array([g / n for g, n in zip(gshape, shape)])
    coords = np.ascontiguousarray(traj.samples * scale[None, :])
    w = np.ones(traj.n_samples)
    for _ in range(iterations):
        grid = kernels.spread(coords, w.astype(np.complex128), gshape,
                              float(kernel_width), table, tscale)
        denom = kernels.interp(grid, coords, float(kernel_width), table, tscale).real
        w = w / np.maximum(denom, eps)
    return traj.replace(validate=False, dcf=_normalized_dcf(traj.samples, w, shape))


@dataclass(frozen=True)
class FeasibilityReport:
    max_gradient_mT_per_m: float
    max_slew_T_per_m_per_s: float
    gradient_ok: bool
    slew_ok: bool

    @property
    def feasible(self):
        return self.gradient_ok and self.slew_ok

    def as_dict(self):
        return {"max_gradient_mT_per_m": self.max_gradient_mT_per_m,
                "max_slew_T_per_m_per_s": self.max_slew_T_per_m_per_s,
                "gradient_ok": self.gradient_ok, "slew_ok": self.slew_ok,
                "feasible": self.feasible}


def check_feasibility(traj, fov_cm=None, gmax_mT_per_m=40.0, smax_T_per_m_per_s=150.0):
    """Finite-difference gradient and slew rate of every interleaf.

    ``g = (dk/dt) / gamma_bar`` with ``k`` converted to 1/m through the FOV;
    slew is the difference of consecutive gradients over the spacing of their
    midpoints.
    """
    fov_cm = traj.fov_cm if fov_cm is None else fov_cm
    for name, v in (("fov_cm", fov_cm), ("gmax", gmax_mT_per_m), ("smax", smax_T_per_m_per_s)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v}")
    k_phys = traj.samples / (fov_cm / 100.0)
    t = traj.timestamps
    gmax = 0.0
    smax = 0.0
    for sl in traj.interleaf_slices():
        if sl.stop - sl.start < 3:
            raise ValidationError("interleaves need at least 3 samples for slew estimates")
        dt = np.diff(t[sl])
        g = np.diff(k_phys[sl], axis=0) / dt[:, None] / GAMMA_BAR
        tm = 0.5 * (t[sl][1:] + t[sl][:-1])
        s = np.diff(g, axis=0) / np.diff(tm)[:, None]
        gmax = max(gmax, float(np.linalg.norm(g, axis=1).max()) * 1e3)
        smax = max(smax, float(np.linalg.norm(s, axis=1).max()))
    return FeasibilityReport(gmax, smax, gmax <= gmax_mT_per_m, smax <= smax_T_per_m_per_s)
