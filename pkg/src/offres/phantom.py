"""Synthetic complex vessel phantoms, smooth field maps and impulse volumes."""
import numpy as np
from scipy.interpolate import CubicSpline

from .data import ComplexVolume, FieldMap
from .errors import ValidationError

VESSEL_MAGNITUDE = 1.0
BACKGROUND_RANGE = (0.1, 0.4)


def _shape3(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3:
        raise ValidationError(f"shape must have 3 entries, got {shape}")
    return shape


def _grid(shape):
    return np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")


def _centerline(rng, shape, n_points):
    # four control points: enter near one face, leave near the opposite one
    shape_a = np.asarray(shape, dtype=np.float64)
    axis = rng.integers(3)
    margin = 0.15 * shape_a
    ctrl = rng.uniform(margin, shape_a - margin, size=(4, 3))
    ctrl[:, axis] = np.linspace(0.08, 0.92, 4) * shape_a[axis]
    if rng.random() < 0.5:
        ctrl = ctrl[::-1]
    spline = CubicSpline(np.linspace(0.0, 1.0, 4), ctrl, axis=0)
    s = np.linspace(0.0, 1.0, n_points)
    return s, spline(s)


def _tube_mask(shape, points, radii):
    mask = np.zeros(shape, dtype=bool)
    for p, r in zip(points, radii):
        lo = np.maximum(np.floor(p - r).astype(int), 0)
        hi = np.minimum(np.ceil(p + r).astype(int) + 1, shape)
        if np.any(hi <= lo):
            continue
        sub = np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij")
        d2 = sum((g - c) ** 2 for g, c in zip(sub, p))
        mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= d2 <= r * r
    return mask


def gen_vessel_phantom(shape, n_vessels, seed, spacing=(1.0, 1.0, 1.0), return_masks=False):
    """Tubes of unit magnitude over a weak ellipsoidal background, with smooth phase.

    Vessels follow cubic-spline centerlines whose radius tapers from a value
    in ``[3, 6]`` voxels (clipped to ``min(shape)/6``) down to one voxel.
    Background ellipsoids have magnitudes in ``[0.1, 0.4]``.  A random
    quadratic phase with peak ``|phase| <= pi/2`` multiplies the whole volume.

    With ``return_masks=True`` also returns ``{"vessel": ..., "background": ...}``.
    """
    shape = _shape3(shape)
    if int(n_vessels) != n_vessels or n_vessels < 1:
        raise ValidationError(f"n_vessels must be an integer >= 1, got {n_vessels}")
    if min(shape) < 16:
        raise ValidationError(f"shape {shape} too small for a vessel phantom (min 16)")
    rng = np.random.default_rng(seed)
    grids = _grid(shape)
    shape_a = np.asarray(shape, dtype=np.float64)

    mag = np.zeros(shape)
    for _ in range(int(rng.integers(3, 7))):
        c = rng.uniform(0.3, 0.7, 3) * shape_a
        ax = rng.uniform(0.2, 0.45, 3) * shape_a
        inside = sum(((g - ci) / ai) ** 2 for g, ci, ai in zip(grids, c, ax)) <= 1.0
        mag = np.where(inside, np.maximum(mag, rng.uniform(*BACKGROUND_RANGE)), mag)

    vessel = np.zeros(shape, dtype=bool)
    r_cap = max(1.0, min(shape) / 6.0)
    for _ in range(int(n_vessels)):
        s, pts = _centerline(rng, shape, 4 * max(shape))
        r0 = min(rng.uniform(3.0, 6.0), r_cap)
        vessel |= _tube_mask(shape, pts, r0 + (1.0 - r0) * s)
    background = (mag > 0) & ~vessel
    mag[vessel] = VESSEL_MAGNITUDE

    x, y, z = ((g - (n - 1) / 2.0) / ((n - 1) / 2.0) for g, n in zip(grids, shape))
    terms = [np.ones(shape), x, y, z, x * x, y * y, z * z, x * y, x * z, y * z]
    coef = rng.standard_normal(len(terms))
    phase = sum(c * t for c, t in zip(coef, terms))
    peak = np.max(np.abs(phase))
    phase *= rng.uniform(0.5, 1.0) * (np.pi / 2) / peak

    vol = ComplexVolume(mag * np.exp(1j * phase), spacing)
    if return_masks:
        return vol, {"vessel": vessel, "background": background}
    return vol


def gen_field_map(shape, f_max, n_blobs=4, seed=0, ramp=False):
    """Sum of random Gaussian bumps (plus optional linear ramp) scaled to ``max|f| = f_max``.

    Bump widths are 15-30% of each dimension and at least 3 voxels, which
    keeps neighbouring voxels within ``f_max/4`` of each other.
    """
    shape = _shape3(shape)
    if not f_max > 0:
        raise ValidationError(f"f_max must be positive, got {f_max}")
    if int(n_blobs) != n_blobs or n_blobs < 0:
        raise ValidationError(f"n_blobs must be a nonnegative integer, got {n_blobs}")
    rng = np.random.default_rng(seed)
    grids = _grid(shape)
    shape_a = np.asarray(shape, dtype=np.float64)
    raw = np.zeros(shape)
    for _ in range(int(n_blobs)):
        c = rng.uniform(0.0, 1.0, 3) * shape_a
        sig = np.maximum(rng.uniform(0.15, 0.3, 3) * shape_a, 3.0)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
        raw += amp * np.exp(-0.5 * sum(((g - ci) / si) ** 2 for g, ci, si in zip(grids, c, sig)))
    if ramp:
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        raw += 0.5 * sum(d * (g - (n - 1) / 2.0) / n for d, g, n in zip(direction, grids, shape))
    peak = np.max(np.abs(raw))
    if peak == 0:
        return FieldMap(raw, float(f_max))
    return FieldMap(raw * (f_max / peak), float(f_max))


def constant_field_map(shape, f0):
    shape = _shape3(shape)
    return FieldMap(np.full(shape, float(f0)), max(abs(float(f0)), 0.0))


def delta_phantom(shape, location):
    """Zero volume with a single ``1+0j`` at ``location``."""
    shape = _shape3(shape)
    loc = tuple(int(v) for v in location)
    if len(loc) != 3 or any(not 0 <= v < n for v, n in zip(loc, shape)):
        raise ValidationError(f"location {location} outside shape {shape}")
    data = np.zeros(shape, dtype=np.complex128)
    data[loc] = 1.0
    return ComplexVolume(data)
