"""Pure-numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_core`` module. Used when the
extension is not built, or when ``OFFRES_FORCE_PYTHON=1`` is set.
"""
import numpy as np

# samples per chunk for the direct sum; bounds the (chunk x voxels) phase matrix
_DIRECT_CHUNK_ELEMS = 4_000_000


def _lookup(table, scale, half, d):
    a = np.abs(d)
    pos = np.minimum(a, half) * scale
    i = pos.astype(np.intp)
    frac = pos - i
    val = table[i] * (1.0 - frac) + table[i + 1] * frac
    return np.where(a > half, 0.0, val)


def _axis_taps(u, half, center, g, table, scale):
    lo = np.ceil(u - half).astype(np.intp)
    ntaps = int(np.floor(2 * half)) + 1
    offs = np.arange(ntaps)
    m = lo[:, None] + offs[None, :]
    w = _lookup(table, scale, half, u[:, None] - m)
    # taps beyond floor(u + half) have |u - m| > half and get weight 0
    return w, np.mod(m + center, g)


def spread(coords, values, grid_shape, width, table, scale):
    gx, gy, gz = grid_shape
    half = 0.5 * width
    wx, ix = _axis_taps(coords[:, 0], half, gx // 2, gx, table, scale)
    wy, iy = _axis_taps(coords[:, 1], half, gy // 2, gy, table, scale)
    wz, iz = _axis_taps(coords[:, 2], half, gz // 2, gz, table, scale)
    size = gx * gy * gz
    re = np.zeros(size)
    im = np.zeros(size)
    for a in range(wx.shape[1]):
        for b in range(wy.shape[1]):
            wxy = wx[:, a] * wy[:, b]
            base = (ix[:, a] * gy + iy[:, b]) * gz
            for c in range(wz.shape[1]):
                w = wxy * wz[:, c]
                flat = base + iz[:, c]
                v = values * w
                re += np.bincount(flat, weights=v.real, minlength=size)
                im += np.bincount(flat, weights=v.imag, minlength=size)
    return (re + 1j * im).reshape(grid_shape)


def interp(grid, coords, width, table, scale):
    gx, gy, gz = grid.shape
    half = 0.5 * width
    wx, ix = _axis_taps(coords[:, 0], half, gx // 2, gx, table, scale)
    wy, iy = _axis_taps(coords[:, 1], half, gy // 2, gy, table, scale)
    wz, iz = _axis_taps(coords[:, 2], half, gz // 2, gz, table, scale)
    out = np.zeros(coords.shape[0], dtype=np.complex128)
    for a in range(wx.shape[1]):
        for b in range(wy.shape[1]):
            wxy = wx[:, a] * wy[:, b]
            for c in range(wz.shape[1]):
                out += grid[ix[:, a], iy[:, b], iz[:, c]] * (wxy * wz[:, c])
    return out


def direct_sum(points, vals, freqs, k, t, dims):
    """s_j = sum_m vals_m exp(-i 2 pi (k_j . r_m / N + f_m t_j))."""
    n = k.shape[0]
    m = points.shape[0]
    out = np.zeros(n, dtype=np.complex128)
    if m == 0:
        return out
    kn = k / np.asarray(dims)[None, :]
    step = max(1, _DIRECT_CHUNK_ELEMS // m)
    for s in range(0, n, step):
        sl = slice(s, s + step)
        ph = kn[sl] @ points.T + np.outer(t[sl], freqs)
        out[sl] = np.exp(-2j * np.pi * ph) @ vals
    return out
