import csv

import numpy as np
import pytest

from localclock.clock import (FieldState, LocalClock, PropagatorConfig, Trajectory,
                              evolve_dispersive, evolve_exact_diagonal, evolve_klein_gordon,
                              evolve_split_operator, kg_energies, kg_max_step,
                              schrodinger_residual, two_clocks_compare)
from localclock.errors import MonitorAbort, PreconditionError
from localclock.grid import (gaussian_packet, half_laplacian_multiplier, kinetic_multiplier,
                             make_grid, plane_wave, relativistic_multiplier)
from localclock.nbody import HamiltonianOperator, Potential, assemble_relative_hamiltonian, \
    jacobi_frame
from localclock.spectral import as_vector, diagonalize, from_vector


def harmonic(n=128, L=20.0, omega=1.0):
    g = make_grid(1, n, L)
    return assemble_relative_hamiltonian(jacobi_frame([2, 2]), g,
                                         {(0, 1): Potential.harmonic(omega)})


def free(n=256, L=40.0):
    g = make_grid(1, n, L)
    return assemble_relative_hamiltonian(jacobi_frame([2, 2]), g, {})


def test_config_steps_and_records():
    cfg = PropagatorConfig("split_operator", 0.1, 1.0, record_every=3)
    assert cfg.n_steps == 10
    np.testing.assert_array_equal(cfg.record_steps(), [0, 3, 6, 9, 10])
    assert cfg.record_times()[-1] == pytest.approx(1.0)
    back = PropagatorConfig("split_operator", 0.1, -1.0)
    assert back.step == pytest.approx(-0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        PropagatorConfig("runge_kutta", 0.1, 1.0)
    with pytest.raises(ValueError):
        PropagatorConfig("split_operator", 0.0, 1.0)
    with pytest.raises(ValueError):
        PropagatorConfig("split_operator", 0.1, 0.01)


@pytest.mark.parametrize("dt", [0.5, 0.05, 0.013])
def test_split_operator_without_potential_is_exact(dt):
    H = free()
    psi = gaussian_packet(H.grid, 0.0, 1.0, 1.5)
    cfg = PropagatorConfig("split_operator", dt, 3.0, record_every=4)
    a = evolve_split_operator(H, psi, cfg)
    b = evolve_dispersive(H.kinetic, psi, cfg)
    np.testing.assert_allclose(a.states, b.states, atol=1e-12)


def test_harmonic_ground_state_is_stationary():
    H = harmonic()
    sd = diagonalize(H, classify=False)
    psi0 = from_vector(sd.eigenvectors[:, 0], H.grid)
    traj = evolve_split_operator(H, psi0, PropagatorConfig("split_operator", 1e-3, 2.0,
                                                           record_every=500))
    for s in traj.states:
        overlap = H.grid.inner(psi0.amplitudes, s)
        assert abs(overlap) == pytest.approx(1.0, abs=1e-8)
    phase = H.grid.inner(psi0.amplitudes, traj.states[-1])
    assert np.angle(phase) == pytest.approx(np.angle(np.exp(-1j * sd.eigenvalues[0] * 2.0)),
                                            abs=1e-6)


def test_exact_diagonal_identity_and_phase():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 6))
    M = A + A.T
    sd = diagonalize(M, classify=False)
    v = rng.normal(size=6) + 0j
    traj = evolve_exact_diagonal(M, v, PropagatorConfig("exact_diagonal", 0.5, 2.0), sd)
    np.testing.assert_allclose(traj.states[0], v, atol=1e-14)
    vj = sd.eigenvectors[:, 2]
    traj = evolve_exact_diagonal(M, vj, PropagatorConfig("exact_diagonal", 0.5, 2.0), sd)
    for t, s in zip(traj.times, traj.states):
        np.testing.assert_allclose(s, np.exp(-1j * t * sd.eigenvalues[2]) * vj, atol=1e-12)


def test_exact_diagonal_matches_extrapolated_split_operator():
    H = harmonic(n=64, L=16.0)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=64) + 1j * rng.normal(size=64)
    exact = evolve_exact_diagonal(H, psi, PropagatorConfig("exact_diagonal", 1.0, 1.0)).states[-1]
    s1 = evolve_split_operator(H, psi, PropagatorConfig("split_operator", 0.01, 1.0),
                               monitor=None).states[-1]
    s2 = evolve_split_operator(H, psi, PropagatorConfig("split_operator", 0.005, 1.0),
                               monitor=None).states[-1]
    richardson = (4 * s2 - s1) / 3
    scale = np.linalg.norm(exact)
    assert np.linalg.norm(richardson - exact) / scale < 1e-2 * np.linalg.norm(s2 - exact) / scale
    assert np.linalg.norm(richardson - exact) / scale < 1e-5


def test_dispersive_phases():
    g = make_grid(1, 64, 2 * np.pi * 8)
    cfg = PropagatorConfig("dispersive_exact", 0.25, 2.0)
    pw = plane_wave(g, 8)  # k0 = 1
    k0 = 1.0
    traj = evolve_dispersive(kinetic_multiplier(g, 1.0), pw, cfg)
    for t, s in zip(traj.times, traj.states):
        np.testing.assert_allclose(s, np.exp(-0.5j * k0**2 * t) * pw.amplitudes, atol=1e-12)
    traj = evolve_dispersive(relativistic_multiplier(g, 1.0, 1.0), pw, cfg)
    np.testing.assert_allclose(traj.states[-1], np.exp(-1j * np.sqrt(2) * 2.0) * pw.amplitudes,
                               atol=1e-12)


@pytest.mark.parametrize("mode", [1, 3, 7])
def test_wave_clock_phase_speed_is_one(mode):
    g = make_grid(1, 64, 10.0)
    pw = plane_wave(g, mode)
    k = 2 * np.pi * mode / 10.0
    traj = evolve_dispersive(half_laplacian_multiplier(g), pw,
                             PropagatorConfig("dispersive_exact", 0.1, 1.0))
    # phase exp(-i |k| t) means phase speed omega / k = 1
    np.testing.assert_allclose(traj.states[-1], np.exp(-1j * k * 1.0) * pw.amplitudes,
                               atol=1e-12)


def test_unitarity_over_ten_thousand_steps():
    g = make_grid(1, 1024, 100.0)
    H = assemble_relative_hamiltonian(jacobi_frame([2, 2]), g,
                                      {(0, 1): Potential.gaussian_well(2.0, 1.0)})
    psi = gaussian_packet(g, -5.0, 1.0, 1.0)
    traj = evolve_split_operator(H, psi, PropagatorConfig("split_operator", 1e-3, 10.0,
                                                          record_every=1000))
    np.testing.assert_allclose(traj.norms(), 1.0, atol=1e-10)


def test_group_law_and_time_reversal_exact():
    H = harmonic(n=64, L=16.0)
    clock = LocalClock(H)
    v = as_vector(gaussian_packet(H.grid, 1.0, 1.0, 0.5))
    np.testing.assert_allclose(clock(0.7, clock(1.3, v)), clock(2.0, v), atol=1e-12)
    np.testing.assert_allclose(clock(-2.0, clock(2.0, v)), v, atol=1e-9)


def test_split_operator_time_reversal_is_exact():
    g = make_grid(1, 256, 40.0)
    H = assemble_relative_hamiltonian(jacobi_frame([2, 2]), g,
                                      {(0, 1): Potential.gaussian_well(2.0, 1.0)})
    psi = gaussian_packet(g, -3.0, 1.0, 1.0)
    fwd = evolve_split_operator(H, psi, PropagatorConfig("split_operator", 0.01, 2.0)).states[-1]
    back = evolve_split_operator(H, fwd, PropagatorConfig("split_operator", 0.01, -2.0))
    # Strang splitting is symmetric, so forward-then-backward is exact up to round-off
    assert g.norm(back.states[-1] - psi.amplitudes) < 1e-9


def test_split_operator_group_law_within_method_tolerance():
    g = make_grid(1, 256, 40.0)
    H = assemble_relative_hamiltonian(jacobi_frame([2, 2]), g,
                                      {(0, 1): Potential.gaussian_well(2.0, 1.0)})
    psi = gaussian_packet(g, -3.0, 1.0, 1.0)
    whole = evolve_split_operator(H, psi, PropagatorConfig("split_operator", 0.01, 2.0))
    half = evolve_split_operator(H, psi, PropagatorConfig("split_operator", 0.01, 1.0))
    two = evolve_split_operator(H, half.states[-1], PropagatorConfig("split_operator", 0.01, 1.0))
    assert g.norm(two.states[-1] - whole.states[-1]) < 1e-12


def test_monitor_abort_keeps_partial_trajectory():
    g = make_grid(1, 256, 40.0)
    H = assemble_relative_hamiltonian(jacobi_frame([2, 2]), g, {(0, 1): Potential.gaussian_well(
        1.0, 1.0)})
    psi = gaussian_packet(g, 0.0, 1.0, 3.0)
    with pytest.raises(MonitorAbort) as info:
        evolve_split_operator(H, psi, PropagatorConfig("split_operator", 0.05, 20.0,
                                                       record_every=10))
    partial = info.value.partial
    assert isinstance(partial, Trajectory) and 1 < len(partial) < 41
    assert info.value.boundary_mass > 1e-3


def test_local_clock_method_selection():
    assert LocalClock(free()).method == "dispersive_exact"
    assert LocalClock(harmonic(n=64)).method == "exact_diagonal"
    big = assemble_relative_hamiltonian(jacobi_frame([2, 2]), make_grid(1, 8192, 400.0),
                                        {(0, 1): Potential.gaussian_well(2.0, 1.0)})
    assert LocalClock(big, dt=0.01).method == "split_operator"
    with pytest.raises(ValueError):
        LocalClock(big)


def test_trajectory_csv(tmp_path):
    g = make_grid(1, 8, 8.0)
    traj = evolve_dispersive(kinetic_multiplier(g, 1.0), gaussian_packet(g),
                             PropagatorConfig("dispersive_exact", 0.5, 1.0))
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "j", "re", "im"]
    assert len(rows) == 1 + 3 * 8
    assert complex(float(rows[5][2]), float(rows[5][3])) == traj.states[0][4]


def test_massless_pulse_follows_characteristics():
    g = make_grid(1, 512, 100.0)
    x = g.x1d
    fs = FieldState(g, np.exp(-x**2 / 8.0), 0.0, c=1.0, mu=0.0)
    traj = evolve_klein_gordon(fs, PropagatorConfig("kg_leapfrog", 1e-3, 10.0,
                                                    record_every=10**9))
    t = traj.times[-1]
    oracle = 0.5 * (np.exp(-(x - t) ** 2 / 8.0) + np.exp(-(x + t) ** 2 / 8.0))
    assert np.max(np.abs(traj.states[-1, 0] - oracle)) < 1e-4


def test_plane_wave_frequency_from_phase_fit():
    from localclock.experiments import plane_wave_frequency
    g = make_grid(1, 256, 50.0)
    k = 2 * np.pi * 3 / 50.0
    exact = np.sqrt(k**2 + 1.0)
    w1 = plane_wave_frequency(g, k, 1.0, 1.0, 0.01, 20.0)
    w2 = plane_wave_frequency(g, k, 1.0, 1.0, 0.005, 20.0)
    assert abs(w1 - exact) > 1e-6  # leapfrog alone carries an O(dt^2) shift
    assert abs((4 * w2 - w1) / 3 - exact) < 1e-6


def test_uniform_field_oscillates_at_rest_frequency():
    g = make_grid(1, 32, 10.0)
    c, mu = 2.0, 0.5
    fs = FieldState(g, 1.0, 0.0, c=c, mu=mu)
    traj = evolve_klein_gordon(fs, PropagatorConfig("kg_leapfrog", 1e-3, 3.0, record_every=100))
    # leapfrog's discrete frequency for omega = c**2 mu
    h, w = 1e-3, c**2 * mu
    theta = np.arccos(1 - (h * w) ** 2 / 2) / h
    np.testing.assert_allclose(traj.states[:, 0].mean(axis=1), np.cos(theta * traj.times),
                               atol=1e-12)
    assert theta == pytest.approx(w, rel=1e-6)


def test_leapfrog_modes_match_first_order_relativistic_system():
    g = make_grid(1, 128, 30.0)
    x = g.x1d
    q0 = np.exp(-x**2 / 4)
    m = relativistic_multiplier(g, 1.0, 1.0)
    # q = Re(phi) with phi evolving under exp(-i t omega) and phi(0) = q0 (qdot = 0
    # needs the +omega and -omega branches in equal parts, i.e. cos(omega t))
    t = 5.0
    qk = g.fft(q0) * np.cos(m.values * t)
    oracle = g.ifft(qk).real
    traj = evolve_klein_gordon(FieldState(g, q0, 0.0, 1.0, 1.0),
                               PropagatorConfig("kg_leapfrog", 1e-3, t, record_every=10**9))
    assert np.max(np.abs(traj.states[-1, 0] - oracle)) < 1e-4


def test_kg_stability_and_energy():
    g = make_grid(1, 128, 30.0)
    fs = FieldState(g, np.exp(-g.x1d**2), 0.0, 1.0, 1.0)
    with pytest.raises(PreconditionError):
        evolve_klein_gordon(fs, PropagatorConfig("kg_leapfrog", 2 * kg_max_step(g, 1.0, 1.0), 1.0))
    traj = evolve_klein_gordon(fs, PropagatorConfig("kg_leapfrog", 1e-3, 5.0, record_every=50))
    E = kg_energies(traj)
    assert np.max(np.abs(E - E[0])) / E[0] < 1e-5


def test_residual_scalar_reduction():
    lam, delta = 1.3, 0.05
    sd = diagonalize(np.diag([lam, -0.4]), classify=False)
    v = np.array([1.0, 0.0], complex)
    traj = evolve_exact_diagonal(np.diag([lam, -0.4]), v,
                                 PropagatorConfig("exact_diagonal", delta, 1.0), sd)
    res = schrodinger_residual(traj, np.diag([lam, -0.4]))
    assert res.max_residual == pytest.approx(abs(lam - np.sin(lam * delta) / delta), rel=1e-8)


def test_residual_is_second_order():
    M = np.array([[0.0, 0.4], [0.4, 1.0]])
    v = np.array([1.0, 0.0], complex)
    r1 = schrodinger_residual(evolve_exact_diagonal(M, v, PropagatorConfig(
        "exact_diagonal", 0.02, 2.0)), M)
    r2 = schrodinger_residual(evolve_exact_diagonal(M, v, PropagatorConfig(
        "exact_diagonal", 0.01, 2.0)), M)
    assert r1.max_residual / r2.max_residual == pytest.approx(4.0, rel=0.02)
    assert r2.order == pytest.approx(2.0, abs=0.05)


def test_residual_flags_frozen_states():
    M = np.diag([0.0, 1.0])
    v = np.array([1.0, 1.0], complex) / np.sqrt(2)
    frozen = Trajectory(np.linspace(0, 1, 11), np.tile(v, (11, 1)), None, "broken")
    res = schrodinger_residual(frozen, M)
    assert res.max_residual == pytest.approx(np.linalg.norm(M @ v), rel=1e-12)


def test_two_clocks_symmetric_packet_stays_centred():
    g = make_grid(1, 1024, 200.0)
    rep = two_clocks_compare(gaussian_packet(g, 0.0, 2.0, 0.0), 10.0, n_records=21)
    assert np.max(np.abs(rep.centers["schrodinger"])) < 1e-10


def test_two_clocks_speeds():
    g = make_grid(1, 2048, 400.0)
    rep = two_clocks_compare(gaussian_packet(g, 0.0, 5.0, 2.0), 30.0, n_records=31)
    assert rep.slopes["wave"] == pytest.approx(1.0, abs=0.01)
    assert rep.slopes["schrodinger"] == pytest.approx(2.0, rel=0.01)
    assert rep.width_growth["schrodinger"] > 1e-3
    assert abs(rep.width_growth["wave"]) < 1e-3


def test_two_clocks_rejects_wide_packet():
    g = make_grid(1, 256, 20.0)
    with pytest.raises(PreconditionError):
        two_clocks_compare(gaussian_packet(g, 0.0, 5.0, 1.0), 1.0)


def test_negative_time_runs_backwards():
    H = free()
    psi = gaussian_packet(H.grid, 0.0, 1.0, 1.0)
    back = evolve_dispersive(H.kinetic, psi, PropagatorConfig("dispersive_exact", 0.5, -5.0))
    x = H.grid.x1d
    centre = np.sum(np.abs(back.states[-1]) ** 2 * x) * H.grid.spacing
    assert centre == pytest.approx(-5.0, abs=1e-5)
    assert back.times[-1] == pytest.approx(-5.0)


def test_dense_operator_wraps_matrix():
    H = HamiltonianOperator.from_matrix(np.diag([0.0, 1.0]))
    assert LocalClock(H).method == "exact_diagonal"
