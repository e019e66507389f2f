import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from localclock.errors import RepresentationError, SizeCapError
from localclock.grid import (FourierMultiplier, WaveFunction, apply_momentum,
                             apply_multiplier, apply_position, boundary_mass,
                             gaussian_packet, half_laplacian_multiplier, kinetic_multiplier,
                             make_grid, plane_wave, relativistic_multiplier)


def test_spacing_and_dft_ordering():
    g = make_grid(1, 8, 8.0)
    assert g.spacing == 1.0
    expected = 2 * np.pi / 8 * np.array([0, 1, 2, 3, -4, -3, -2, -1])
    np.testing.assert_allclose(g.kvalues[0], expected, atol=1e-15)


def test_only_nyquist_is_unpaired():
    g = make_grid(1, 8, 8.0)
    assert g.kvalues[0].sum() == pytest.approx(2 * np.pi / 8 * -4, abs=1e-14)


@pytest.mark.parametrize("n", [7, 100, 4, 12])
def test_rejects_bad_point_counts(n):
    with pytest.raises(ValueError, match="power of two"):
        make_grid(1, n, 8.0)


def test_rejects_bad_dims_and_extent():
    with pytest.raises(ValueError):
        make_grid(4, 8, 1.0)
    with pytest.raises(ValueError):
        make_grid(1, 8, -1.0)


def test_size_cap():
    with pytest.raises(SizeCapError):
        make_grid(3, 256, 10.0)
    with pytest.raises(SizeCapError):
        make_grid(2, 64, 10.0, cap=1000)


@given(st.sampled_from([8, 16, 64, 256]), st.floats(0.5, 1000.0))
def test_spacing_times_n_is_extent(n, extent):
    g = make_grid(1, n, extent)
    assert g.spacing * g.n == pytest.approx(extent, rel=1e-15)
    assert len(g.k1d) == n


def test_positions_are_centred():
    g = make_grid(1, 8, 8.0)
    np.testing.assert_array_equal(g.x1d, np.arange(-4.0, 4.0))


def test_packet_is_normalized():
    g = make_grid(2, 64, 20.0)
    psi = gaussian_packet(g, center=(1.0, -2.0), width=(1.0, 1.5), momentum=(0.5, 0.0))
    assert psi.norm() == pytest.approx(1.0, abs=1e-10)


def test_parseval_and_round_trip():
    g = make_grid(1, 128, 30.0)
    psi = gaussian_packet(g, 1.0, 1.3, 2.0)
    mom = psi.to_momentum()
    assert mom.representation == "momentum"
    assert mom.norm() == pytest.approx(psi.norm(), abs=1e-12)
    back = mom.to_position()
    rel = np.linalg.norm(back.amplitudes - psi.amplitudes) / np.linalg.norm(psi.amplitudes)
    assert rel < 1e-12


def test_position_on_constant_is_odd_with_zero_mean():
    g = make_grid(1, 64, 16.0)
    psi = WaveFunction(g, np.ones(g.shape, complex))
    out = apply_position(psi)
    # the lattice is symmetric about 0 except the single point -L/2
    inner = out[1:]
    np.testing.assert_allclose(inner, -inner[::-1], atol=1e-14)
    g_mean = np.mean(out[1:])
    assert abs(g_mean) < 1e-14


def test_position_on_lattice_delta():
    g = make_grid(1, 8, 8.0)
    a = np.zeros(8, complex)
    j = int(np.nonzero(g.x1d == 2.0)[0][0])
    a[j] = 1.0
    out = apply_position(WaveFunction(g, a))
    expected = np.zeros(8, complex)
    expected[j] = 2.0
    np.testing.assert_array_equal(out, expected)


def test_position_expectation_of_centred_gaussian():
    g = make_grid(1, 256, 40.0)
    psi = gaussian_packet(g, 0.0, 1.0, 0.0)
    assert abs(g.inner(psi.amplitudes, apply_position(psi))) < 1e-12


def test_position_requires_position_representation():
    g = make_grid(1, 16, 8.0)
    with pytest.raises(RepresentationError):
        apply_position(gaussian_packet(g).to_momentum())


def test_momentum_on_plane_wave():
    g = make_grid(1, 64, 10.0)
    psi = plane_wave(g, 3)
    k = 2 * np.pi * 3 / 10.0
    np.testing.assert_allclose(apply_momentum(psi), k * psi.amplitudes, atol=1e-12)


def test_momentum_on_constant():
    g = make_grid(1, 32, 10.0)
    out = apply_momentum(WaveFunction(g, np.ones(32, complex)))
    np.testing.assert_allclose(out, 0.0, atol=1e-13)


def test_momentum_matches_finite_differences_with_second_order_error():
    errs = []
    for n in (128, 256, 512):
        g = make_grid(1, n, 40.0)
        psi = gaussian_packet(g, 0.0, 1.0, 1.0)
        a = psi.amplitudes
        fd = -1j * (np.roll(a, -1) - np.roll(a, 1)) / (2 * g.spacing)
        errs.append(np.max(np.abs(apply_momentum(psi) - fd)))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    for r in ratios:
        assert r == pytest.approx(4.0, rel=0.05)


def test_canonical_commutator_improves_under_refinement():
    devs = []
    for n in (64, 128, 256):
        g = make_grid(1, n, 40.0)
        psi = gaussian_packet(g, 0.0, 1.0, 0.5)
        xp = apply_position(WaveFunction(g, apply_momentum(psi)))
        px = apply_momentum(WaveFunction(g, apply_position(psi)))
        devs.append(abs(g.inner(psi.amplitudes, xp - px) - 1j))
    assert devs[2] < devs[1] < devs[0] or devs[2] < 1e-12
    assert devs[2] < 1e-10


def test_identity_multiplier():
    g = make_grid(1, 64, 10.0)
    psi = gaussian_packet(g, 0.5, 1.0, 1.0)
    one = FourierMultiplier(g, lambda ks: np.ones_like(ks[0]), "one")
    np.testing.assert_allclose(apply_multiplier(one, psi), psi.amplitudes, atol=1e-12)


def test_kinetic_and_half_laplacian_on_plane_waves():
    g = make_grid(1, 64, 10.0)
    psi = plane_wave(g, 3)
    k0 = 3 * 2 * np.pi / 10.0
    np.testing.assert_allclose(apply_multiplier(kinetic_multiplier(g, 1.0), psi),
                               k0**2 / 2 * psi.amplitudes, atol=1e-12)
    np.testing.assert_allclose(apply_multiplier(half_laplacian_multiplier(g), psi),
                               abs(k0) * psi.amplitudes, atol=1e-12)


def test_relativistic_symbol():
    g = make_grid(1, 32, 2 * np.pi)
    m = relativistic_multiplier(g, c=1.0, mu=1.0)
    k = g.k1d
    np.testing.assert_allclose(m.values, np.sqrt(k**2 + 1.0), atol=1e-14)


def test_multiplier_rejects_complex_symbol():
    g = make_grid(1, 16, 8.0)
    with pytest.raises(ValueError):
        FourierMultiplier(g, lambda ks: 1j * ks[0], "bad")
    with pytest.raises(ValueError):
        FourierMultiplier(g, lambda ks: np.full_like(ks[0], np.inf), "bad")


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_composition_of_multipliers(a, b):
    g = make_grid(1, 64, 12.0)
    psi = gaussian_packet(g, 0.3, 1.0, 1.0)
    kin = kinetic_multiplier(g, 1.0)
    f = lambda e: a * e + b * np.sin(e)
    composed = kin.compose(f)
    direct = FourierMultiplier(g, lambda ks: f(0.5 * ks[0] ** 2), "f(k^2/2)")
    np.testing.assert_allclose(apply_multiplier(composed, psi),
                               apply_multiplier(direct, psi), atol=1e-12)


def test_boundary_mass():
    g = make_grid(1, 256, 40.0)
    assert boundary_mass(g, gaussian_packet(g, 0.0, 1.0).amplitudes) < 1e-12
    assert boundary_mass(g, gaussian_packet(g, 18.0, 1.0).amplitudes) > 0.5
