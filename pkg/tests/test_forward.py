import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import rel_err, smooth_image
from offres.data import KSpaceData
from offres.errors import SizeGuardError, ValidationError
from offres.forward import (AUGMENT_FREQS, add_global_offres, demodulate_global, forward_exact,
                            forward_freq_segmented, frequency_bins, psf_energy_radius,
                            psf_local)
from offres.phantom import constant_field_map, delta_phantom, gen_field_map
from offres.recon import grid_forward
from offres.trajectory import generate_cones, refine_dcf_pipemenon, scale_readout

SHAPE = (16, 16, 16)


def _ndft(img, traj):
    n = img.shape[0]
    ax = np.arange(n) - n // 2
    r = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    return np.exp(-2j * np.pi * traj.samples @ r.T / n) @ img.ravel()


def _ndft_offres(img, fmap, traj):
    n = img.shape[0]
    ax = np.arange(n) - n // 2
    r = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    ph = traj.samples @ r.T / n + np.outer(traj.timestamps, fmap.ravel())
    return np.exp(-2j * np.pi * ph) @ img.ravel()


@pytest.fixture(scope="module")
def small():
    traj = generate_cones(4, 4, 24, 1.18e-3, 1.0, 8)
    r = np.random.default_rng(0)
    img = r.standard_normal((8,) * 3) + 1j * r.standard_normal((8,) * 3)
    return traj, img


def test_zero_map_equals_ndft(traj16):
    img = smooth_image(SHAPE, 1)
    got = forward_exact(img, None, traj16).values
    np.testing.assert_allclose(got, _ndft(img, traj16), rtol=0, atol=1e-10 * np.abs(got).max())
    zeros = forward_exact(img, np.zeros(SHAPE), traj16).values
    np.testing.assert_array_equal(got, zeros)


def test_spatially_varying_map_matches_matrix_oracle(small):
    traj, img = small
    fmap = gen_field_map((8,) * 3, 400.0, seed=3).data
    got = forward_exact(img, fmap, traj).values
    assert rel_err(got, _ndft_offres(img, fmap, traj)) < 1e-12


def test_global_phase_factorization(traj16):
    img = smooth_image(SHAPE, 2)
    base = forward_exact(img, None, traj16)
    shifted = forward_exact(img, constant_field_map(SHAPE, 180.0), traj16)
    expect = add_global_offres(base, traj16, 180.0).values
    assert rel_err(shifted.values, expect) <= 1e-10


def test_delta_on_radial_spoke_unit_modulus():
    spoke = generate_cones(1, 1, 33, 1e-3, 0.0, 16)
    s = forward_exact(delta_phantom(SHAPE, (3, 11, 7)), None, spoke).values
    np.testing.assert_allclose(np.abs(s), 1.0, rtol=1e-12)


@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 1000))
def test_linearity(a, b, seed):
    traj = generate_cones(2, 3, 16, 1e-3, 1.0, 8)
    r = np.random.default_rng(seed)
    x1, x2 = (r.standard_normal((8,) * 3) + 1j * r.standard_normal((8,) * 3) for _ in range(2))
    fmap = gen_field_map((8,) * 3, 300.0, seed=seed).data
    lhs = forward_exact(a * x1 + b * x2, fmap, traj).values
    rhs = a * forward_exact(x1, fmap, traj).values + b * forward_exact(x2, fmap, traj).values
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs) + 1e-12


def test_size_guard(traj16):
    with pytest.raises(SizeGuardError):
        forward_exact(np.ones(SHAPE), None, traj16, max_cost=1e4)
    # zero voxels are skipped, so a delta passes the same guard
    forward_exact(delta_phantom(SHAPE, (8, 8, 8)), None, traj16, max_cost=1e5)


def test_shape_mismatches(traj16):
    with pytest.raises(ValidationError):
        forward_exact(np.ones((8, 8, 8)), None, traj16)
    with pytest.raises(ValidationError):
        forward_exact(np.ones(SHAPE), np.zeros((8, 8, 8)), traj16)


def test_noise_is_seeded(traj16):
    img = delta_phantom(SHAPE, (8, 8, 8))
    a = forward_exact(img, None, traj16, noise_std=0.1, seed=5).values
    b = forward_exact(img, None, traj16, noise_std=0.1, seed=5).values
    clean = forward_exact(img, None, traj16).values
    assert np.array_equal(a, b)
    assert np.std(a - clean) == pytest.approx(0.1, rel=0.05)


# --- frequency segmentation -------------------------------------------------------

def test_single_bin_constant_map(traj16):
    img = smooth_image(SHAPE, 4)
    fmap = constant_field_map(SHAPE, -220.0)
    seg = forward_freq_segmented(img, fmap, traj16, 1).values
    assert rel_err(seg, forward_exact(img, fmap, traj16).values) < 5e-3


def test_zero_map_any_bins_is_plain_nufft(traj16):
    img = smooth_image(SHAPE, 5)
    plain = grid_forward(img, traj16).values
    for nb in (1, 3, 16):
        np.testing.assert_array_equal(forward_freq_segmented(img, None, traj16, nb).values, plain)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_segmentation_refines_monotonically(traj16, seed):
    img = smooth_image(SHAPE, 3 + seed)
    fmap = gen_field_map(SHAPE, 200.0, seed=seed)
    exact = forward_exact(img, fmap, traj16).values
    errs = [rel_err(forward_freq_segmented(img, fmap, traj16, nb).values, exact)
            for nb in (2, 4, 8, 16)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2


def test_frequency_bins():
    f = np.linspace(-100, 100, 8 * 8 * 8).reshape(8, 8, 8)
    centers, labels = frequency_bins(f, 4)
    np.testing.assert_allclose(centers, [-75, -25, 25, 75])
    assert labels.min() == 0 and labels.max() == 3
    assert np.all(np.abs(f - centers[labels]) <= 25 + 1e-9)
    c, lab = frequency_bins(np.full((4, 4, 4), 7.0), 5)
    assert list(c) == [7.0] and np.all(lab == 0)
    with pytest.raises(ValidationError):
        frequency_bins(f, 0)


# --- global injection / demodulation --------------------------------------------

def test_augmentation_grid():
    assert AUGMENT_FREQS.size == 101
    assert AUGMENT_FREQS[0] == -500.0 and AUGMENT_FREQS[-1] == 500.0
    assert np.allclose(np.diff(AUGMENT_FREQS), 10.0)


def test_zero_shift_is_identity(traj16, rng):
    s = rng.standard_normal(traj16.n_samples) + 1j * rng.standard_normal(traj16.n_samples)
    np.testing.assert_array_equal(add_global_offres(s, traj16, 0.0).values, s)
    np.testing.assert_array_equal(demodulate_global(s, traj16, 0.0).values, s)


@given(st.floats(-1000, 1000), st.integers(0, 10 ** 6))
def test_demodulate_inverts_add(f, seed):
    traj = generate_cones(2, 2, 32, 3.35e-3, 1.0, 8)
    r = np.random.default_rng(seed)
    s = r.standard_normal(traj.n_samples) + 1j * r.standard_normal(traj.n_samples)
    back = demodulate_global(add_global_offres(s, traj, f), traj, f).values
    assert rel_err(back, s) <= 1e-12
    twice = add_global_offres(add_global_offres(s, traj, f), traj, -f).values
    assert rel_err(twice, s) <= 1e-12


def test_add_multiplies_by_phase(traj16, rng):
    s = rng.standard_normal(traj16.n_samples) + 0j
    out = add_global_offres(KSpaceData(s, traj16.fingerprint), traj16, 250.0)
    np.testing.assert_allclose(out.values, s * np.exp(-2j * np.pi * 250.0 * traj16.timestamps),
                               rtol=1e-15)
    assert out.traj_ref == traj16.fingerprint


def test_misaligned_kspace_rejected(traj16):
    with pytest.raises(ValidationError):
        add_global_offres(np.zeros(10), traj16, 10.0)
    with pytest.raises(ValidationError):
        demodulate_global(np.zeros(10), traj16, 10.0)


# --- point spread functions -------------------------------------------------------

@pytest.fixture(scope="module")
def dense32():
    # sampled finely enough that aliasing stays below 10% of PSF energy
    return refine_dcf_pipemenon(generate_cones(64, 64, 64, 1.18e-3, 0.5, 32), 10)


def test_psf_peak_and_locality(dense32):
    loc = (16, 16, 16)
    p = np.abs(psf_local(dense32, loc, 0.0, (32,) * 3).data)
    assert np.unravel_index(np.argmax(p), p.shape) == loc
    # nearest neighbours belong to the main lobe; sidelobes are outside radius 2
    grids = np.meshgrid(*[np.arange(32)] * 3, indexing="ij")
    d = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, loc)))
    assert p[loc] / p[d > 2].max() > 5


def test_psf_off_center_location(dense32):
    loc = (16, 10, 22)
    p = np.abs(psf_local(dense32, loc, 0.0, (32,) * 3).data)
    assert np.unravel_index(np.argmax(p), p.shape) == loc


def test_psf_sign_of_offres_matters(dense32):
    loc = (16, 16, 16)
    tr = scale_readout(dense32, 3.35 / 1.18)
    a = psf_local(tr, loc, 300.0, (32,) * 3).data
    b = psf_local(tr, loc, -300.0, (32,) * 3).data
    assert rel_err(a, b) > 0.1


def test_psf_widens_with_readout(dense32):
    loc = (16, 16, 16)
    radii = [psf_energy_radius(psf_local(scale_readout(dense32, s), loc, 400.0, (32,) * 3).data,
                               loc) for s in (1.0, 2.0)]
    assert radii[1] >= radii[0]


def test_energy_radius_oracle():
    p = np.zeros((8, 8, 8))
    p[4, 4, 4] = 3.0
    p[4, 4, 6] = 1.0
    # the peak holds 90% of the energy; 95% needs the second voxel at distance 2
    assert psf_energy_radius(p, (4, 4, 4)) == 0.0
    assert psf_energy_radius(p, (4, 4, 4), fraction=0.95) == 2.0
    assert psf_energy_radius(p, (4, 4, 4), fraction=0.5) == 0.0
    q = np.zeros((8, 8, 8))
    q[0, 0, 0] = 1.0
    q[7, 0, 0] = 1.0
    # periodic distance wraps around
    assert psf_energy_radius(q, (0, 0, 0)) == 1.0
