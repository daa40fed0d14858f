import numpy as np
import pytest
from hypothesis import given, strategies as st

from offres.errors import ValidationError
from offres.forward import psf_local
from offres.trajectory import (AUGMENT_FACTORS, GAMMA_BAR, T_READ_LONG, T_READ_SHORT,
                               ConesTrajectory, augmentation_family, check_feasibility,
                               dc_gain, generate_cones, refine_dcf_pipemenon, scale_readout)


def test_counts_radius_and_timestamps():
    t = generate_cones(16, 8, 64, 1e-3, 1.5, 32)
    assert t.n_samples == 8192
    assert np.all(np.linalg.norm(t.samples, axis=1) <= 16.0 * (1 + 1e-12))
    assert t.interleaf_counts == [64] * 128
    for sl in t.interleaf_slices():
        np.testing.assert_allclose(t.timestamps[sl], np.arange(64) * 1e-3 / 63, rtol=0, atol=1e-18)


def test_degenerate_radial_spoke():
    t = generate_cones(1, 1, 17, 2e-3, 0.0, 16)
    k = t.samples
    assert np.all(k[:, 2] == 0.0)
    assert np.linalg.norm(k[-1]) == pytest.approx(8.0, rel=1e-12)
    # every sample lies on the same ray
    direction = k[-1] / np.linalg.norm(k[-1])
    np.testing.assert_allclose(np.cross(k, direction), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(k, axis=1), np.linspace(0, 8, 17), atol=1e-12)


def test_default_readout_pair():
    assert T_READ_SHORT == 1.18e-3 and T_READ_LONG == 3.35e-3


def test_every_interleaf_reaches_kmax():
    t = generate_cones(7, 5, 40, 1e-3, 3.0, 24)
    for sl in t.interleaf_slices():
        assert np.linalg.norm(t.samples[sl][-1]) == pytest.approx(12.0, rel=1e-9)


def test_cone_angles_uniform_in_cos():
    n = 6
    t = generate_cones(n, 3, 10, 1e-3, 1.0, 16)
    last = t.samples[9::10]
    cos = np.unique(np.round(last[:, 2] / 8.0, 12))
    np.testing.assert_allclose(cos, -1 + (2 * np.arange(n) + 1) / n, atol=1e-12)


def test_deterministic():
    a = generate_cones(8, 4, 20, 1e-3, 2.0, 16)
    b = generate_cones(8, 4, 20, 1e-3, 2.0, 16)
    assert a == b and a.fingerprint == b.fingerprint


def test_dcf_rule():
    t = generate_cones(4, 3, 12, 1e-3, 1.0, 16)
    assert dc_gain(t.samples, t.dcf, t.grid_size) == pytest.approx(1.0, rel=1e-12)
    for sl in t.interleaf_slices():
        w = t.dcf[sl]
        r = np.linalg.norm(t.samples[sl], axis=1)
        np.testing.assert_allclose(w[1:] / r[1:] ** 2, w[1] / r[1] ** 2, rtol=1e-10)
        nz = np.sort(w[1:][w[1:] > 0])
        assert w[0] == pytest.approx(nz[:2].mean(), rel=1e-12)


@pytest.mark.parametrize("kw", [
    dict(n_cones=0), dict(interleaves_per_cone=0), dict(samples_per_interleaf=1),
    dict(t_read=0.0), dict(t_read=-1e-3), dict(grid_size=15), dict(grid_size=6),
    dict(twist=float("nan")),
])
def test_generate_rejects_bad_parameters(kw):
    args = dict(n_cones=2, interleaves_per_cone=2, samples_per_interleaf=8, t_read=1e-3,
                twist=1.0, grid_size=16)
    args.update(kw)
    with pytest.raises(ValidationError):
        generate_cones(**args)


def test_arrays_are_read_only(traj16):
    with pytest.raises(ValueError):
        traj16.samples[0, 0] = 1.0
    with pytest.raises(ValueError):
        traj16.dcf[0] = 1.0


def test_trajectory_invariants_enforced():
    k = np.zeros((3, 3))
    with pytest.raises(ValidationError):
        ConesTrajectory(k, [0.0, 1e-4, 1e-4], [0, 0, 0], np.ones(3), 8, 1e-3)
    with pytest.raises(ValidationError):
        ConesTrajectory(k, [1e-5, 1e-4, 2e-4], [0, 0, 0], np.ones(3), 8, 1e-3)
    with pytest.raises(ValidationError):
        ConesTrajectory(k + 5.0, [0.0, 1e-4, 2e-4], [0, 0, 0], np.ones(3), 8, 1e-3)
    with pytest.raises(ValidationError):
        ConesTrajectory(k, [0.0, 1e-4, 2e-4], [0, 0, 0], [1.0, -1.0, 1.0], 8, 1e-3)
    with pytest.raises(ValidationError):
        ConesTrajectory(k, [0.0, 1e-4], [0, 0, 0], np.ones(3), 8, 1e-3)


# --- readout scaling ----------------------------------------------------------

def test_scale_identity(traj16):
    assert scale_readout(traj16, 1.0) == traj16


def test_scale_doubles_time():
    t = generate_cones(2, 2, 16, 1e-3, 1.0, 16)
    s = scale_readout(t, 2.0)
    np.testing.assert_array_equal(s.timestamps, 2.0 * t.timestamps)
    assert s.t_read == 2e-3 and s.timestamps.max() == pytest.approx(2e-3, rel=1e-15)
    np.testing.assert_array_equal(s.samples, t.samples)
    np.testing.assert_array_equal(s.dcf, t.dcf)


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_scale_composition_exact(a, b):
    t = generate_cones(2, 2, 9, 1e-3, 1.0, 8)
    lhs = scale_readout(scale_readout(t, a), b)
    rhs = scale_readout(t, a * b)
    np.testing.assert_array_equal(lhs.timestamps, rhs.timestamps)
    assert lhs.t_read == rhs.t_read


@pytest.mark.parametrize("factor", [0.0, -1.0])
def test_scale_rejects_nonpositive(traj16, factor):
    with pytest.raises(ValidationError):
        scale_readout(traj16, factor)


def test_augmentation_family(traj16):
    fam = augmentation_family(traj16)
    assert AUGMENT_FACTORS == (1.5, 2.0, 2.5, 3.0)
    assert [f.t_read for f in fam] == pytest.approx([traj16.t_read * f for f in AUGMENT_FACTORS])
    assert all(np.array_equal(f.samples, traj16.samples) for f in fam)


# --- density compensation -------------------------------------------------------

def test_pipemenon_cartesian_constant():
    n = 8
    ax = np.arange(n) - n // 2
    kz, ky, kx = np.meshgrid(ax, ax, ax, indexing="ij")
    samples = np.column_stack([kz.ravel(), ky.ravel(), kx.ravel()]).astype(float)
    t = np.tile(np.arange(n) * 1e-5, n * n)
    il = np.repeat(np.arange(n * n), n)
    # full periodic Cartesian grid; corners exceed k_max so skip validation
    traj = ConesTrajectory(samples, t, il, np.ones(n ** 3), n, 1e-4, validate=False)
    out = refine_dcf_pipemenon(traj, 5)
    assert np.ptp(out.dcf) <= 1e-10 * out.dcf.mean()


def test_pipemenon_radial_density_shells():
    t = generate_cones(32, 48, 33, 1e-3, 0.0, 16)
    w = refine_dcf_pipemenon(t, 10).dcf
    k = np.linalg.norm(t.samples, axis=1)
    ref = np.median(w[k >= 2] / k[k >= 2] ** 2)
    # shell averages of dcf / |k|^2; the last shell (kernel edge) is excluded
    for lo, hi in [(2, 3), (3, 4), (4, 5), (5, 6), (6, 7)]:
        s = (k >= lo) & (k < hi)
        assert np.mean(w[s] / k[s] ** 2) / ref == pytest.approx(1.0, abs=0.2)


def test_pipemenon_keeps_geometry(traj16):
    out = refine_dcf_pipemenon(traj16, 3)
    np.testing.assert_array_equal(out.samples, traj16.samples)
    np.testing.assert_array_equal(out.timestamps, traj16.timestamps)
    assert dc_gain(out.samples, out.dcf, out.grid_size) == pytest.approx(1.0, rel=1e-12)
    assert np.all(out.dcf >= 0)


def test_pipemenon_rejects_zero_iterations(traj16):
    with pytest.raises(ValidationError):
        refine_dcf_pipemenon(traj16, 0)


def _sidelobe_fraction(psf, loc, radius=2.0):
    grids = np.meshgrid(*[np.arange(n) for n in psf.shape], indexing="ij")
    d = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, loc)))
    e = np.abs(psf) ** 2
    return e[d > radius].sum() / e.sum()


def test_pipemenon_reduces_psf_sidelobes():
    base = generate_cones(32, 48, 64, 1.18e-3, 2.0, 32)
    loc = (16, 16, 16)
    analytic = _sidelobe_fraction(psf_local(base, loc, 0.0, (32,) * 3).data, loc)
    refined = _sidelobe_fraction(psf_local(refine_dcf_pipemenon(base, 10), loc, 0.0,
                                           (32,) * 3).data, loc)
    assert refined < analytic


# --- feasibility ------------------------------------------------------------------

def _fd_oracle(traj, fov_cm):
    g_all, s_all = [], []
    for sl in traj.interleaf_slices():
        k = traj.samples[sl] * 100.0 / fov_cm
        t = traj.timestamps[sl]
        g = [(k[i + 1] - k[i]) / (t[i + 1] - t[i]) / GAMMA_BAR for i in range(len(t) - 1)]
        tm = [(t[i + 1] + t[i]) / 2 for i in range(len(t) - 1)]
        s = [(g[i + 1] - g[i]) / (tm[i + 1] - tm[i]) for i in range(len(g) - 1)]
        g_all += [np.linalg.norm(v) for v in g]
        s_all += [np.linalg.norm(v) for v in s]
    return max(g_all) * 1e3, max(s_all)


def test_feasibility_matches_oracle():
    t = generate_cones(8, 8, 64, 1.18e-3, 2.0, 32)
    rep = check_feasibility(t)
    g, s = _fd_oracle(t, 24.0)
    assert rep.max_gradient_mT_per_m == pytest.approx(g, rel=1e-12)
    assert rep.max_slew_T_per_m_per_s == pytest.approx(s, rel=1e-12)
    assert np.isfinite(g) and np.isfinite(s)
    assert rep.gradient_ok == (g <= 40.0) and rep.slew_ok == (s <= 150.0)


def test_halving_readout_doubles_gradient():
    t = generate_cones(4, 4, 32, 2e-3, 1.0, 32)
    a = check_feasibility(t).max_gradient_mT_per_m
    b = check_feasibility(scale_readout(t, 0.5)).max_gradient_mT_per_m
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_static_trajectory_feasible():
    k = np.tile([[1.0, 2.0, 0.5]], (5, 1))
    t = ConesTrajectory(k, np.arange(5) * 1e-5, np.zeros(5), np.ones(5), 8, 4e-5, validate=False)
    rep = check_feasibility(t)
    assert rep.max_gradient_mT_per_m == 0 and rep.max_slew_T_per_m_per_s == 0 and rep.feasible


def test_feasibility_rejects_short_interleaves():
    with pytest.raises(ValidationError):
        check_feasibility(generate_cones(2, 2, 2, 1e-3, 1.0, 16))
    with pytest.raises(ValidationError):
        check_feasibility(generate_cones(2, 2, 8, 1e-3, 1.0, 16), gmax_mT_per_m=0)
