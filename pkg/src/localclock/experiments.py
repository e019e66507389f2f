"""Experiment runners behind the command line.

Each runner takes a validated :class:`~localclock.scenario.Scenario` and an
output directory, writes its result files there and returns an
:class:`Outcome` listing those files and the checks it made.  All floats are
written with ``%.17g`` so that identical scenarios give identical files.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from .clock import (FieldState, LocalClock, PropagatorConfig, evolve_klein_gordon,
                    kg_energies, two_clocks_compare)
from .errors import MonitorAbort
from .grid import bump_packet, gaussian_packet, make_grid
from .nbody import (ParticleSystem, Potential, assemble_relative_hamiltonian,
                    com_separation_check, jacobi_frame)
from .resolvent import (TAIL_TOL, broadened_measure, density_scan, equivalence_report,
                        fourier_laplace_resolvent, fourier_laplace_tail, resolvent_apply)
from .scattering import TestFunction, geometric_times, run_theorem1_suite
from .spectral import as_vector, beat_signal, diagonalize, eigenprojector, ergodic_projector


@dataclass
class Outcome:
    files: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def check(self, name, value, tolerance, passed):
        self.checks.append({"name": name, "value": float(value),
                            "tolerance": float(tolerance), "passed": bool(passed)})


def fmt(v) -> str:
    return f"{float(v):.17g}"


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def write_json(path: Path, data):
    with open(path, "w") as fh:
        fh.write(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")
    return path


def build_grid(sc):
    g = sc["grid"]
    return make_grid(g["dims"], g["n"], g["extent"])


def build_potentials(sc) -> dict:
    pots = {}
    for p in sc["system"]["potentials"]:
        params = {k: v for k, v in p.items() if k not in ("kind", "pair")}
        pots[tuple(p["pair"])] = Potential(p["kind"], params)
    return pots


def build_hamiltonian(sc, grid):
    frame = jacobi_frame(sc["system"]["masses"])
    return assemble_relative_hamiltonian(frame, grid, build_potentials(sc)), frame


def build_packet(sc, grid, momentum=None):
    p = sc["packet"] if "packet" in sc.blocks else {"shape": "gaussian", "center": 0.0,
                                                     "width": 1.0, "momentum": 2.0}
    make = gaussian_packet if p["shape"] == "gaussian" else bump_packet
    k0 = p["momentum"] if momentum is None else momentum
    return make(grid, p["center"], p["width"], k0)


def random_hermitian(size, rng):
    a = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    return (a + a.conj().T) / (2 * np.sqrt(size))


def random_probe(size, rng):
    v = rng.normal(size=size) + 1j * rng.normal(size=size)
    return v / np.linalg.norm(v)


def build_operator(sc, rng, default="two_level"):
    """Operator and a default probe for the matrix-level experiments.

    Precedence: explicit ``system.matrix``, then ``system.random_hermitian``,
    then the relative Hamiltonian on ``[grid]``, then the built-in default
    (``diag(0, 1)`` or a random 64x64 matrix).
    """
    s = sc["system"]
    if s["matrix"] is not None:
        M = np.array(s["matrix"], dtype=float)
        if s["matrix_imag"] is not None:
            M = M + 1j * np.array(s["matrix_imag"], dtype=float)
        return M, np.ones(len(M), complex) / np.sqrt(len(M))
    if s["random_hermitian"] > 0 or ("grid" not in sc.blocks and default == "random"):
        size = s["random_hermitian"] or 64
        M = random_hermitian(size, rng)
        return M, random_probe(size, rng)
    if "grid" in sc.blocks:
        grid = build_grid(sc)
        H, _ = build_hamiltonian(sc, grid)
        return H, as_vector(build_packet(sc, grid))
    return np.diag([0.0, 1.0]), np.ones(2, complex) / np.sqrt(2)


def run_theorem1(sc, out: Path) -> Outcome:
    p = sc["theorem1"]
    grid = build_grid(sc)
    H, frame = build_hamiltonian(sc, grid)
    psi0 = build_packet(sc, grid)
    times = geometric_times(p["t_min"], p["t_max"], p["n_times"], p["time_sign"])
    phi = None
    if p["phi_center"] is not None or p["phi_halfwidth"] is not None:
        c = p["phi_center"] if p["phi_center"] is not None else p["phi_halfwidth"]
        phi = TestFunction(c, p["phi_halfwidth"] if p["phi_halfwidth"] is not None else c)
    spectral = None
    res = Outcome()
    if H.has_potential:
        spectral = diagonalize(H)
        res.files.append(write_csv(
            out / "spectrum.csv", ["index", "eigenvalue", "second_moment", "class"],
            [(i, lam, m, c) for i, (lam, m, c) in enumerate(zip(
                spectral.eigenvalues, spectral.second_moments,
                spectral.classification or ("unclassified",) * spectral.size))]))
    try:
        ds = run_theorem1_suite(H, psi0, times, p["R"], phi=phi, spectral=spectral,
                                continuum_threshold=p["continuum_threshold"],
                                filter_continuum=p["filter_continuum"],
                                dt=sc["propagator"]["dt"])
    except MonitorAbort as exc:
        exc.partial.to_csv(out / "diagnostics_partial.csv")
        raise
    res.files.append(out / "diagnostics.csv")
    ds.to_csv(res.files[-1])
    res.files.append(out / "fits.csv")
    ds.fits_to_csv(res.files[-1])
    for name, ok in ds.decreasing().items():
        res.check(f"{name}_decreasing", ds.series(name)[-1], ds.series(name)[0], ok)
    expo = ds.fits["velocity_mismatch"].exponent
    res.check("velocity_exponent", expo, p["exponent_tolerance"],
              abs(expo + 1) <= p["exponent_tolerance"])
    res.summary = {"meta": ds.meta, "exponents": {k: f.exponent for k, f in ds.fits.items()}}
    return res


def run_two_clocks(sc, out: Path) -> Outcome:
    p = sc["two_clocks"]
    grid = build_grid(sc)
    res = Outcome()
    centers, widths, names, times = [], [], [], None
    speeds = {}
    for k0 in p["momenta"]:
        rep = two_clocks_compare(build_packet(sc, grid, k0), p["t_final"], p["n_records"])
        times = rep.times
        for clock in ("wave", "schrodinger"):
            names.append(f"{clock}_k{k0:g}")
            centers.append(rep.centers[clock])
            widths.append(rep.widths[clock])
        wave, schr = rep.slopes["wave"], rep.slopes["schrodinger"]
        tol = p["speed_tolerance"]
        res.check(f"wave_speed_k{k0:g}", wave, tol, abs(wave - 1) <= tol)
        res.check(f"schrodinger_speed_k{k0:g}", schr, tol, abs(schr - k0) <= tol * k0)
        growth = rep.width_growth["schrodinger"]
        res.check(f"schrodinger_width_grows_k{k0:g}", growth, 1e-3, growth > 1e-3)
        speeds[f"{k0:g}"] = rep.as_dict()
    res.files.append(write_csv(out / "centers.csv", ["t"] + names,
                               np.column_stack([times] + centers)))
    res.files.append(write_csv(out / "widths.csv", ["t"] + names,
                               np.column_stack([times] + widths)))
    res.summary = {"clocks": speeds}
    return res


def run_ergodic(sc, out: Path, rng) -> Outcome:
    p = sc["ergodic"]
    H, psi = build_operator(sc, rng)
    if p["probe"] is not None:
        psi = np.asarray(p["probe"], dtype=complex)
        psi = psi / np.linalg.norm(psi)
    sd = diagonalize(H, classify=False)
    clock = LocalClock(H, spectral=sd)
    lam = p["lambda"]
    exact = eigenprojector(sd, lam).apply(psi)
    others = np.abs(sd.eigenvalues - lam)
    gap = float(others[others > 1e-9].min())
    Ts = np.asarray(p["T"], dtype=float)
    errors = np.array([np.linalg.norm(ergodic_projector(clock, lam, T, psi) - exact)
                       for T in Ts])
    envelope = 2 * np.linalg.norm(psi) / (Ts * gap)
    res = Outcome()
    res.files.append(write_csv(out / "ergodic.csv", ["T", "error", "envelope"],
                               zip(Ts, errors, envelope)))
    tol = p["halving_tolerance"]
    for i in range(1, len(Ts)):
        ratio = errors[i - 1] / errors[i] if errors[i] > 0 else np.inf
        expected = Ts[i] / Ts[i - 1]
        res.check(f"error_ratio_T{Ts[i]:g}", ratio, tol,
                  abs(ratio - expected) <= tol * expected)
    res.check("within_envelope", float(np.max(errors / envelope)), 1.0,
              bool(np.all(errors <= envelope)))
    res.summary = {"lambda": lam, "gap": gap, "errors": errors.tolist()}
    return res


def run_stone(sc, out: Path, rng) -> Outcome:
    p = sc["stone"]
    H, psi = build_operator(sc, rng, default="random")
    sd = diagonalize(H, classify=False)
    res = Outcome()
    scans, oracles = [], []
    nrm2 = float(np.vdot(psi, psi).real)
    for eps in p["eps"]:
        pad = p["window"] * eps
        lo, hi = sd.eigenvalues[0] - pad, sd.eigenvalues[-1] + pad
        lams = np.linspace(lo, hi, int(np.ceil((hi - lo) / (eps / 4))) + 1)
        scan = density_scan(H, lams, eps, psi)
        oracle = broadened_measure(sd, lams, eps, psi)
        worst = float(np.max(np.abs(scan.values - oracle)))
        res.check(f"solve_vs_eigen_eps{eps:g}", worst, p["tolerance"], worst <= p["tolerance"])
        rel = abs(scan.integral - nrm2) / nrm2
        res.check(f"integral_eps{eps:g}", rel, p["integral_tolerance"],
                  rel <= p["integral_tolerance"])
        scans += [(lam, v, eps) for lam, v in zip(lams, scan.values)]
        oracles += [(lam, v, eps) for lam, v in zip(lams, oracle)]
    res.files.append(write_csv(out / "density.csv", ["lambda", "value", "eps"], scans))
    res.files.append(write_csv(out / "density_oracle.csv", ["lambda", "value", "eps"], oracles))
    res.summary = {"size": sd.size, "norm_squared": nrm2}
    return res


def run_fourier_laplace(sc, out: Path, rng) -> Outcome:
    p = sc["fourier_laplace"]
    H, psi = build_operator(sc, rng)
    z = complex(*p["z"])
    clock = LocalClock(H)
    rho = clock.spectral_radius
    dt = p["dt"] if p["dt"] is not None else 0.05 / (abs(z) + rho)
    T_max = p["T_max"] if p["T_max"] is not None else 1.05 * np.log(1 / TAIL_TOL) / abs(z.imag)
    direct = resolvent_apply(H, z, psi)
    fl = fourier_laplace_resolvent(clock, z, psi, T_max, dt, rho)
    rel = float(np.linalg.norm(fl - direct) / np.linalg.norm(direct))
    tail = fourier_laplace_tail(clock, z, psi, np.linspace(2, 8, 7) / abs(z.imag), dt,
                                exact=direct)
    res = Outcome()
    res.files.append(write_csv(out / "fl_tail.csv", ["T_max", "error"],
                               zip(tail.T_values, tail.errors)))
    res.check("quadrature_vs_solve", rel, p["tolerance"], rel <= p["tolerance"])
    res.check("tail_rate", tail.rate, p["tail_tolerance"],
              tail.relative_deviation <= p["tail_tolerance"])
    res.summary = {"z": [z.real, z.imag], "dt": dt, "T_max": T_max, "clock": clock.method,
                   "relative_error": rel, "tail_rate": tail.rate,
                   "expected_tail_rate": tail.expected_rate}
    return res


def plane_wave_frequency(grid, k, c, mu, dt, t_final):
    """Frequency of a standing cosine mode measured from a leapfrog run."""
    x = grid.x1d
    fs = FieldState(grid, np.cos(k * x), 0.0, c, mu)
    traj = evolve_klein_gordon(fs, PropagatorConfig("kg_leapfrog", dt, t_final))
    amp = traj.states[:, 0] @ np.cos(k * x) / np.sum(np.cos(k * x) ** 2)
    guess = c * np.sqrt(k**2 + (c * mu) ** 2)
    (omega,), _ = curve_fit(lambda t, w: np.cos(w * t), traj.times, amp, p0=[guess],
                            xtol=1e-15, ftol=1e-15)
    return float(omega)


def characteristics_oracle(grid, width, c, t):
    """d'Alembert solution for a Gaussian at rest, summed over periodic images."""
    x, L = grid.x1d, grid.extent
    f = sum(np.exp(-((x - s + m * L) ** 2) / (2 * width**2))
            for s in (c * t, -c * t) for m in range(-3, 4))
    return 0.5 * f


def run_klein_gordon(sc, out: Path) -> Outcome:
    p = sc["klein_gordon"]
    grid = build_grid(sc)
    c, mu = p["c"], p["mu_field"]
    k = 2 * np.pi * p["k_mode"] / grid.extent
    exact = c * np.sqrt(k**2 + (c * mu) ** 2)
    dts = [p["dt"], p["dt"] / 2]
    omegas = [plane_wave_frequency(grid, k, c, mu, h, p["t_final"]) for h in dts]
    extrapolated = (4 * omegas[1] - omegas[0]) / 3
    res = Outcome()
    res.files.append(write_csv(out / "kg_frequency.csv", ["dt", "omega", "omega_exact"],
                               [(h, w, exact) for h, w in zip(dts, omegas)]
                               + [(0.0, extrapolated, exact)]))
    err = abs(extrapolated - exact)
    res.check("frequency", err, p["frequency_tolerance"], err <= p["frequency_tolerance"])

    w = p["pulse_width"]
    pulse = FieldState(grid, np.exp(-grid.x1d**2 / (2 * w**2)), 0.0, c, 0.0)
    traj = evolve_klein_gordon(pulse, PropagatorConfig(
        "kg_leapfrog", p["pulse_dt"], p["pulse_t_final"], record_every=10**9))
    q = traj.states[-1, 0]
    oracle = characteristics_oracle(grid, w, c, traj.times[-1])
    err = float(np.max(np.abs(q - oracle)))
    res.files.append(write_csv(out / "kg_pulse.csv", ["x", "q", "q_characteristics"],
                               zip(grid.x1d, q, oracle)))
    res.check("pulse_vs_characteristics", err, p["pulse_tolerance"],
              err <= p["pulse_tolerance"])

    mode = FieldState(grid, np.cos(k * grid.x1d), 0.0, c, mu)
    n_steps = int(round(p["t_final"] / p["energy_dt"]))
    traj = evolve_klein_gordon(mode, PropagatorConfig(
        "kg_leapfrog", p["energy_dt"], p["t_final"], record_every=max(1, n_steps // 200)))
    energy = kg_energies(traj)
    drift = float(np.max(np.abs(energy - energy[0])) / energy[0])
    res.files.append(write_csv(out / "kg_energy.csv", ["t", "energy"], zip(traj.times, energy)))
    res.check("energy_drift", drift, p["energy_tolerance"], drift <= p["energy_tolerance"])
    res.summary = {"k": k, "omega_exact": exact, "omega_extrapolated": extrapolated}
    return res


def run_com_separation(sc, out: Path) -> Outcome:
    p = sc["com_separation"]
    grid = build_grid(sc)
    system = ParticleSystem(sc["system"]["masses"], build_potentials(sc))
    rep = com_separation_check(system, grid, tol=p["tolerance"])
    res = Outcome()
    res.files.append(write_csv(
        out / "com_spectrum.csv", ["index", "full", "summed", "difference"],
        [(i, a, b, a - b) for i, (a, b) in enumerate(zip(rep.full_eigenvalues,
                                                         rep.summed_eigenvalues))]))
    res.check("spectrum_matches", rep.max_mismatch, p["tolerance"], rep.passed)
    return res


def run_beats(sc, out: Path) -> Outcome:
    p = sc["beats"]
    grid = build_grid(sc)
    H, _ = build_hamiltonian(sc, grid)
    sd = diagonalize(H, classify=False)
    levels = list(p["levels"])
    coef = np.ones(len(levels)) / np.sqrt(len(levels))
    probe = int(np.argmin(np.abs(grid.x1d - p["probe_x"])))
    times = np.linspace(0.0, p["t_final"], p["n_samples"], endpoint=False)
    bs = beat_signal(sd, coef, levels, probe, times)
    energies = sd.eigenvalues[levels]
    gaps = sorted({float(abs(a - b)) for a in energies for b in energies if abs(a - b) > 1e-9})
    res = Outcome()
    res.files.append(write_csv(out / "beats_series.csv", ["t", "density"],
                               zip(bs.times, bs.signal)))
    idx = np.searchsorted(bs.frequencies, bs.peaks)
    res.files.append(write_csv(out / "beats_peaks.csv", ["frequency", "power"],
                               zip(bs.peaks, bs.power[idx])))
    if gaps:
        for g in gaps:
            miss = float(np.min(np.abs(bs.peaks - g))) if len(bs.peaks) else np.inf
            res.check(f"peak_at_gap_{g:.6g}", miss, bs.bin_width, miss <= bs.bin_width)
    else:
        spread = float(np.ptp(bs.signal))
        res.check("constant_signal", spread, 1e-12 * max(1.0, bs.signal.mean()),
                  len(bs.peaks) == 0)
    res.summary = {"levels": levels, "energies": energies.tolist(), "gaps": gaps,
                   "dominant": bs.dominant, "bin_width": bs.bin_width,
                   "probe_x": float(grid.x1d[probe])}
    return res


def run_equivalence(sc, out: Path, rng) -> Outcome:
    p = sc["equivalence"]
    H, psi = build_operator(sc, rng)
    sd = diagonalize(H, classify=False)
    lambdas = p["lambdas"] if p["lambdas"] is not None else sorted(
        {float(v) for v in np.round(sd.eigenvalues, 12)})
    z_set = [complex(a, b) for a, b in p["z"]]
    rep = equivalence_report(H, [psi], z_set, lambdas, p["T"], p["eps"],
                             tol_fl=p["fl_tolerance"], tol_stone=p["stone_tolerance"])
    res = Outcome()
    res.files.append(out / "equivalence.json")
    rep.to_json(res.files[-1])
    for c in rep.checks:
        res.check(c["name"], c["max_error"], c["tolerance"], c["passed"])
    return res


RUNNERS = {
    "theorem1": run_theorem1,
    "two_clocks": run_two_clocks,
    "ergodic": run_ergodic,
    "stone": run_stone,
    "fourier_laplace": run_fourier_laplace,
    "klein_gordon": run_klein_gordon,
    "com_separation": run_com_separation,
    "beats": run_beats,
    "equivalence": run_equivalence,
}
SEEDED = {"ergodic", "stone", "fourier_laplace", "equivalence"}


def run_experiment(sc, out: Path) -> Outcome:
    runner = RUNNERS[sc.experiment]
    if sc.experiment in SEEDED:
        return runner(sc, out, np.random.default_rng(sc["experiment"]["seed"]))
    return runner(sc, out)
