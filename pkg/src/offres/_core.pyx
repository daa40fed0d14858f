# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: Kaiser-Bessel spreading/interpolation and the
direct-sum signal equation.

Signatures mirror :mod:`offres._pykernels` exactly; both are exercised by
the test-suite against each other.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, fabs, sin, cos, M_PI

cnp.import_array()

DEF MAXTAPS = 32


cdef inline double _lookup(const double[::1] table, double scale,
                           double half, double d) nogil:
    cdef double a = fabs(d)
    cdef double pos
    cdef Py_ssize_t i
    if a > half:
        return 0.0
    pos = a * scale
    i = <Py_ssize_t>pos
    pos -= i
    return table[i] * (1.0 - pos) + table[i + 1] * pos


cdef inline Py_ssize_t _wrap(Py_ssize_t m, Py_ssize_t g) nogil:
    m = m % g
    if m < 0:
        m += g
    return m


cdef Py_ssize_t _taps(double u, double half, Py_ssize_t center, Py_ssize_t g,
                      const double[::1] table, double scale,
                      double* w, Py_ssize_t* idx) nogil:
    cdef Py_ssize_t lo = <Py_ssize_t>ceil(u - half)
    cdef Py_ssize_t hi = <Py_ssize_t>floor(u + half)
    cdef Py_ssize_t m, n = 0
    for m in range(lo, hi + 1):
        if n >= MAXTAPS:
            break
        w[n] = _lookup(table, scale, half, u - m)
        idx[n] = _wrap(m + center, g)
        n += 1
    return n


def spread(const double[:, ::1] coords, const double complex[::1] values,
           tuple grid_shape, double width, const double[::1] table,
           double scale):
    cdef Py_ssize_t gx = grid_shape[0], gy = grid_shape[1], gz = grid_shape[2]
    cdef Py_ssize_t n = coords.shape[0]
    out = np.zeros((gx, gy, gz), dtype=np.complex128)
    cdef double complex[:, :, ::1] grid = out
    cdef double half = 0.5 * width
    cdef double wx[MAXTAPS]
    cdef double wy[MAXTAPS]
    cdef double wz[MAXTAPS]
    cdef Py_ssize_t ix[MAXTAPS]
    cdef Py_ssize_t iy[MAXTAPS]
    cdef Py_ssize_t iz[MAXTAPS]
    cdef Py_ssize_t j, a, b, c, nx, ny, nz
    cdef double wxy
    cdef double complex v
    with nogil:
        for j in range(n):
            nx = _taps(coords[j, 0], half, gx // 2, gx, table, scale, wx, ix)
            ny = _taps(coords[j, 1], half, gy // 2, gy, table, scale, wy, iy)
            nz = _taps(coords[j, 2], half, gz // 2, gz, table, scale, wz, iz)
            v = values[j]
            for a in range(nx):
                for b in range(ny):
                    wxy = wx[a] * wy[b]
                    for c in range(nz):
                        grid[ix[a], iy[b], iz[c]] += v * (wxy * wz[c])
    return out


def interp(const double complex[:, :, ::1] grid, const double[:, ::1] coords,
           double width, const double[::1] table, double scale):
    cdef Py_ssize_t gx = grid.shape[0], gy = grid.shape[1], gz = grid.shape[2]
    cdef Py_ssize_t n = coords.shape[0]
    out = np.zeros(n, dtype=np.complex128)
    cdef double complex[::1] res = out
    cdef double half = 0.5 * width
    cdef double wx[MAXTAPS]
    cdef double wy[MAXTAPS]
    cdef double wz[MAXTAPS]
    cdef Py_ssize_t ix[MAXTAPS]
    cdef Py_ssize_t iy[MAXTAPS]
    cdef Py_ssize_t iz[MAXTAPS]
    cdef Py_ssize_t j, a, b, c, nx, ny, nz
    cdef double wxy
    cdef double complex acc
    with nogil:
        for j in range(n):
            nx = _taps(coords[j, 0], half, gx // 2, gx, table, scale, wx, ix)
            ny = _taps(coords[j, 1], half, gy // 2, gy, table, scale, wy, iy)
            nz = _taps(coords[j, 2], half, gz // 2, gz, table, scale, wz, iz)
            acc = 0
            for a in range(nx):
                for b in range(ny):
                    wxy = wx[a] * wy[b]
                    for c in range(nz):
                        acc = acc + grid[ix[a], iy[b], iz[c]] * (wxy * wz[c])
            res[j] = acc
    return out


def direct_sum(const double[:, ::1] points, const double complex[::1] vals,
               const double[::1] freqs, const double[:, ::1] k,
               const double[::1] t, const double[::1] dims):
    """s_j = sum_m vals_m exp(-i 2 pi (k_j . r_m / N + f_m t_j))."""
    cdef Py_ssize_t m = points.shape[0], n = k.shape[0]
    out = np.zeros(n, dtype=np.complex128)
    cdef double complex[::1] res = out
    cdef Py_ssize_t j, p
    cdef double twopi = 2.0 * M_PI
    cdef double kx, ky, kz, tj, ph, sr, si, vr, vi, cph, sph
    with nogil:
        for j in range(n):
            kx = k[j, 0] / dims[0]
            ky = k[j, 1] / dims[1]
            kz = k[j, 2] / dims[2]
            tj = t[j]
            sr = 0.0
            si = 0.0
            for p in range(m):
                ph = -twopi * (kx * points[p, 0] + ky * points[p, 1]
                               + kz * points[p, 2] + freqs[p] * tj)
                cph = cos(ph)
                sph = sin(ph)
                vr = vals[p].real
                vi = vals[p].imag
                sr += vr * cph - vi * sph
                si += vr * sph + vi * cph
            res[j] = sr + 1j * si
    return out
