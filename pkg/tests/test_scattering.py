import numpy as np
import pytest

from localclock.clock import PropagatorConfig, evolve_split_operator
from localclock.errors import BoundStateError, MonitorAbort, PreconditionError
from localclock.grid import WaveFunction, gaussian_packet, make_grid, plane_wave
from localclock.nbody import Potential, assemble_relative_hamiltonian, jacobi_frame
from localclock.scattering import (TestFunction, energy_mismatch, escape_norm, fit_power_law,
                                   free_gaussian_velocity_mismatch, geometric_times,
                                   is_decreasing, local_time_calibration, run_theorem1_suite,
                                   velocity_mismatch)
from localclock.spectral import diagonalize, from_vector


def free(n, L, masses=(2.0, 2.0)):
    return assemble_relative_hamiltonian(jacobi_frame(masses), make_grid(1, n, L), {})


def well(n=1024, L=400.0, depth=2.0, width=1.0):
    return assemble_relative_hamiltonian(jacobi_frame([2.0, 2.0]), make_grid(1, n, L),
                                         {(0, 1): Potential.gaussian_well(depth, width)})


def test_escape_norm_limits():
    g = make_grid(1, 512, 100.0)
    assert escape_norm(gaussian_packet(g, 0.0, 1.0), 20.0) == pytest.approx(1.0, abs=1e-12)
    assert escape_norm(gaussian_packet(g, 40.0, 1.0), 5.0) < 1e-12
    with pytest.raises(ValueError):
        escape_norm(gaussian_packet(g), 60.0)


def test_escape_norm_matches_erf():
    from scipy.special import erf
    g = make_grid(1, 2048, 100.0)
    w, R = 2.0, 1.5
    # |psi|^2 is a normal density with standard deviation w; the lattice points
    # inside |x| < R are the midpoints of cells covering |x| < (m + 1/2) h
    m = np.floor(R / g.spacing)
    exact = np.sqrt(erf((m + 0.5) * g.spacing / (np.sqrt(2) * w)))
    assert escape_norm(gaussian_packet(g, 0.0, w), R) == pytest.approx(exact, abs=g.spacing**2 / 100)


def test_bump_vanishes_outside_support():
    phi = TestFunction(1.0, 0.5)
    np.testing.assert_array_equal(phi(np.array([0.4, 1.5, 3.0])), 0.0)
    assert phi(np.array([1.0]))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        TestFunction(0.0, 0.0)


def test_energy_mismatch_free_is_zero():
    H = free(256, 50.0)
    psi = gaussian_packet(H.grid, 0.0, 1.0, 2.0)
    assert energy_mismatch(psi, TestFunction(2.0, 2.0), H) == 0.0


def test_energy_mismatch_below_spectrum_is_zero():
    H = well(256, 40.0)
    psi = gaussian_packet(H.grid, 0.0, 1.0, 2.0)
    assert energy_mismatch(psi, TestFunction(-50.0, 1.0), H) < 1e-14


def test_velocity_mismatch_on_plane_wave():
    g = make_grid(1, 128, 20.0)
    psi = plane_wave(g, 2)
    k, mu, t = 2 * np.pi * 2 / 20.0, 1.0, 7.0
    # oracle: the lattice sum of (x/t - k/mu)^2 with |psi|^2 = 1/L
    oracle = np.sqrt(np.sum((g.x1d / t - k / mu) ** 2) * g.spacing / 20.0)
    assert velocity_mismatch(psi, t, mu) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(ValueError):
        velocity_mismatch(psi, 0.0, mu)


def test_free_gaussian_velocity_mismatch_is_exact():
    H = free(8192, 800.0)
    psi0 = gaussian_packet(H.grid, 0.0, 1.0, 2.0)
    times = geometric_times(5, 40, 6)
    ds = run_theorem1_suite(H, psi0, times, R=10.0)
    np.testing.assert_allclose(ds.velocity_mismatch,
                               free_gaussian_velocity_mismatch(times, 1.0), rtol=1e-10)
    assert ds.fits["velocity_mismatch"].exponent == pytest.approx(-1.0, abs=1e-8)
    assert np.all(ds.energy_mismatch == 0.0)
    assert all(ds.decreasing().values())


def test_bound_state_velocity_mismatch_stays_finite():
    H = well(256, 40.0, depth=5.0)
    sd = diagonalize(H)
    ground = from_vector(sd.eigenvectors[:, 0], H.grid).normalized()
    p_spread = 1 / np.sqrt(2)  # reduced mass of two unit-2 masses is 1
    vals = [velocity_mismatch(ground, t, 1.0) for t in (10.0, 100.0, 1000.0)]
    assert min(vals) > 0.1
    assert vals[-1] == pytest.approx(vals[-2], rel=0.1)
    assert vals[-1] > 0.5 * p_spread
    assert escape_norm(ground, 5.0) >= 0.9


def test_calibration_free_packet():
    H = free(4096, 400.0)
    psi0 = gaussian_packet(H.grid, 0.0, 1.0, 2.0)
    traj = evolve_split_operator(H, psi0, PropagatorConfig(dt=0.05, t_final=20.0,
                                                           record_every=40))
    cal = local_time_calibration(traj, 1.0)
    assert cal.deviation[-1] < 0.02
    assert cal.slope == pytest.approx(1.0, abs=1e-8)


def test_calibration_offset_from_launch_point():
    H = free(4096, 400.0)
    x0, k0, mu = -20.0, 2.0, 1.0
    psi0 = gaussian_packet(H.grid, x0, 1.0, k0)
    traj = evolve_split_operator(H, psi0, PropagatorConfig(dt=0.05, t_final=20.0,
                                                           record_every=40))
    cal = local_time_calibration(traj, mu)
    assert cal.offset == pytest.approx(mu * x0 / k0, abs=1e-8)
    shifted = local_time_calibration(traj, mu, origin=x0)
    assert shifted.deviation[-1] < 1e-8


def test_calibration_rejects_bound_state():
    H = well(256, 40.0, depth=5.0)
    sd = diagonalize(H)
    ground = from_vector(sd.eigenvectors[:, 0], H.grid).normalized()
    traj = evolve_split_operator(H, ground, PropagatorConfig(dt=0.05, t_final=2.0))
    with pytest.raises(PreconditionError):
        local_time_calibration(traj, 1.0)


def test_backward_clock_mirrors_forward():
    H = free(4096, 400.0)
    psi0 = gaussian_packet(H.grid, 0.0, 1.0, 2.0)
    mirrored = WaveFunction(H.grid, psi0.amplitudes.conj())
    times = geometric_times(5, 40, 5)
    fwd = run_theorem1_suite(H, psi0, times, R=10.0)
    bwd = run_theorem1_suite(H, mirrored, -times, R=10.0)
    for name in ("escape", "energy_mismatch", "velocity_mismatch"):
        np.testing.assert_allclose(bwd.series(name), fwd.series(name), rtol=1e-9, atol=1e-14)


def test_well_suite_decreases():
    H = well()
    psi0 = gaussian_packet(H.grid, 0.0, 1.0, 4.0)
    ds = run_theorem1_suite(H, psi0, geometric_times(5, 25, 12), R=10.0)
    assert ds.meta["continuum_weight"] > 0.99
    assert all(ds.decreasing().values()), ds.decreasing()
    assert ds.fits["velocity_mismatch"].exponent == pytest.approx(-1.0, abs=0.2)


def test_slow_packet_on_deep_well_is_refused():
    H = well(256, 40.0, depth=5.0)
    psi0 = gaussian_packet(H.grid, 0.0, 1.0, 0.0)
    with pytest.raises(BoundStateError):
        run_theorem1_suite(H, psi0, geometric_times(1, 5, 4), R=5.0)


def test_translation_invariance_of_free_suite():
    H = free(4096, 400.0)
    times = geometric_times(5, 20, 4)
    a = run_theorem1_suite(H, gaussian_packet(H.grid, 0.0, 1.0, 2.0), times, R=10.0)
    b = run_theorem1_suite(H, gaussian_packet(H.grid, -30.0, 1.0, 2.0), times, R=10.0,
                           origin=-30.0)
    np.testing.assert_allclose(a.velocity_mismatch, b.velocity_mismatch, rtol=1e-10)


def test_monitor_abort_keeps_partial_series():
    H = free(1024, 100.0)
    psi0 = gaussian_packet(H.grid, 0.0, 1.0, 3.0)
    with pytest.raises(MonitorAbort) as info:
        run_theorem1_suite(H, psi0, geometric_times(5, 60, 8), R=10.0)
    part = info.value.partial
    assert 0 < len(part.times) < 8
    assert part.meta["aborted"]


def test_time_grid_validation():
    H = free(256, 50.0)
    psi0 = gaussian_packet(H.grid)
    with pytest.raises(ValueError):
        run_theorem1_suite(H, psi0, [1.0, -2.0], R=5.0)
    with pytest.raises(ValueError):
        run_theorem1_suite(H, psi0, [2.0, 1.0], R=5.0)
    with pytest.raises(ValueError):
        geometric_times(5, 1, 3)


def test_power_law_fit_recovers_exponent():
    t = np.geomspace(1, 100, 20)
    fit = fit_power_law(t, 3.0 * t**-1.5)
    assert fit.exponent == pytest.approx(-1.5, abs=1e-12)
    assert fit.amplitude == pytest.approx(3.0, rel=1e-12)
    assert np.isnan(fit_power_law(t, np.zeros_like(t)).exponent)


def test_is_decreasing():
    assert is_decreasing([3, 2, 1])
    assert not is_decreasing([3, 2, 2.5])
    assert is_decreasing([0.0, 0.0])
