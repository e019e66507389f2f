"""Propagators ``exp(-i t H)`` and the Klein-Gordon field integrator.

Time may run backwards: a negative ``t_final`` evolves towards negative
times with the same step size.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import MonitorAbort, PreconditionError
from .grid import (BOUNDARY_THRESHOLD, FourierMultiplier, Grid, WaveFunction,
                   boundary_mass, half_laplacian_multiplier, kinetic_multiplier)
from .nbody import DENSE_CAP, HamiltonianOperator
from .spectral import SpectralData, diagonalize

METHODS = ("split_operator", "exact_diagonal", "dispersive_exact", "kg_leapfrog")
KG_CFL_MARGIN = 0.9


@dataclass(frozen=True)
class PropagatorConfig:
    """Step size, end time and snapshot cadence.

    ``t_final`` may be negative.  When ``|t_final|`` is not a multiple of
    ``dt`` the step is shrunk so that an integer number of steps lands on it.
    """

    method: str = "split_operator"
    dt: float = 0.01
    t_final: float = 1.0
    record_every: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not abs(self.t_final) >= self.dt * (1 - 1e-12):
            raise ValueError("|t_final| must be at least dt")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError("record_every must be a positive integer")

    @property
    def n_steps(self) -> int:
        return max(1, int(np.ceil(abs(self.t_final) / self.dt - 1e-9)))

    @property
    def step(self) -> float:
        """Signed step actually taken."""
        return self.t_final / self.n_steps

    def record_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.record_every)
        if steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps

    def record_times(self) -> np.ndarray:
        return self.record_steps() * self.step


@dataclass
class Trajectory:
    """Snapshots of a run.

    ``states`` has shape ``(n_snapshots, *state_shape)``: grid-shaped complex
    arrays for Schrodinger-type runs, flat vectors for dense runs, and
    ``(2, *grid.shape)`` real pairs ``(q, qdot)`` for Klein-Gordon runs.
    """

    times: np.ndarray
    states: np.ndarray
    grid: Grid | None
    generator: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def norms(self) -> np.ndarray:
        axes = tuple(range(1, self.states.ndim))
        sq = np.sum(np.abs(self.states) ** 2, axis=axes)
        if self.grid is not None:
            sq = sq * self.grid.cell_volume
        return np.sqrt(sq)

    def wavefunction(self, i) -> WaveFunction:
        if self.grid is None:
            raise ValueError("dense trajectories have no grid")
        return WaveFunction(self.grid, self.states[i])

    def to_csv(self, path):
        """Long format: ``t, j, re, im`` with ``j`` the flat lattice index."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "j", "re", "im"])
            for t, s in zip(self.times, self.states):
                flat = np.asarray(s).ravel()
                for j, v in enumerate(flat):
                    w.writerow([f"{t:.17g}", j, f"{v.real:.17g}", f"{v.imag:.17g}"])


def _amplitudes(psi, grid=None):
    if isinstance(psi, WaveFunction):
        return psi.grid, psi.to_position().amplitudes
    return grid, np.asarray(psi, dtype=complex)


def _check_monitor(grid, amps, threshold, partial):
    if threshold is None or grid is None:
        return
    mass = boundary_mass(grid, amps)
    if mass > threshold:
        raise MonitorAbort(
            f"boundary-layer mass {mass:.3e} exceeds {threshold:.1e}; "
            "the packet is about to wrap around the periodic domain",
            partial=partial(), boundary_mass=mass)


def evolve_split_operator(H: HamiltonianOperator, psi, config: PropagatorConfig,
                          monitor=BOUNDARY_THRESHOLD) -> Trajectory:
    """Strang splitting ``exp(-i h V/2) exp(-i h T) exp(-i h V/2)`` per step."""
    if not isinstance(H, HamiltonianOperator) or not H.is_splittable:
        raise PreconditionError("split-operator needs a kinetic multiplier + potential")
    grid = H.grid
    _, a = _amplitudes(psi, grid)
    a = a.reshape(grid.shape).copy()
    h = config.step
    kin = np.exp(-1j * h * H.kinetic.values)
    if H.potential is not None:
        half = np.exp(-0.5j * h * H.potential)
        full = half * half
    else:
        half = full = None
    rec = set(config.record_steps().tolist())
    times, states = [0.0], [a.copy()]

    def partial():
        return Trajectory(np.array(times), np.array(states), grid, "split_operator")

    _check_monitor(grid, a, monitor, partial)
    if half is not None:
        a = half * a
    for s in range(1, config.n_steps + 1):
        a = grid.ifft(kin * grid.fft(a))
        if s in rec:
            if half is not None:
                a = half * a
            times.append(s * h)
            states.append(a.copy())
            _check_monitor(grid, a, monitor, partial)
            if half is not None and s < config.n_steps:
                a = half * a
        elif full is not None:
            a = full * a
    return Trajectory(np.array(times), np.array(states), grid, "split_operator",
                      {"dt": abs(h)})


def evolve_exact_diagonal(H, psi, config: PropagatorConfig,
                          spectral: SpectralData | None = None) -> Trajectory:
    """``sum_j exp(-i t lambda_j) <v_j, psi> v_j`` at every record time."""
    sd = spectral if spectral is not None else diagonalize(H, classify=False)
    grid = H.grid if isinstance(H, HamiltonianOperator) else None
    _, a = _amplitudes(psi, grid)
    coef = sd.coefficients(a.ravel())
    times = config.record_times()
    phases = np.exp(-1j * np.outer(times, sd.eigenvalues))
    states = (phases * coef) @ sd.eigenvectors.T
    if grid is not None:
        states = states.reshape((len(times),) + grid.shape)
    return Trajectory(times, states, grid, "exact_diagonal")


def evolve_dispersive(symbol, psi, config: PropagatorConfig) -> Trajectory:
    """Exact evolution under a pure Fourier multiplier ``omega(k)``.

    ``symbol`` is a :class:`FourierMultiplier` or a callable of the momentum
    arrays (then ``psi`` must be a WaveFunction so the grid is known).
    """
    if isinstance(symbol, FourierMultiplier):
        grid = symbol.grid
    else:
        if not isinstance(psi, WaveFunction):
            raise ValueError("pass a WaveFunction when the symbol is a bare callable")
        symbol = FourierMultiplier(psi.grid, symbol, "omega")
        grid = symbol.grid
    _, a = _amplitudes(psi, grid)
    a_k = grid.fft(a.reshape(grid.shape))
    times = config.record_times()
    states = np.array([grid.ifft(np.exp(-1j * t * symbol.values) * a_k) for t in times])
    return Trajectory(times, states, grid, "dispersive_exact", {"symbol": symbol.name})


class LocalClock:
    """Callable ``clock(t, v) -> exp(-i t H) v`` for any supported generator.

    Dense matrices and densifiable grid operators are propagated through
    their eigen-decomposition, pure multipliers exactly in Fourier space,
    and larger grid operators with a potential by split-operator steps of
    size at most ``dt``.
    """

    def __init__(self, H, dt=None, spectral: SpectralData | None = None):
        if isinstance(H, FourierMultiplier):
            H = HamiltonianOperator(kinetic=H)
        if not isinstance(H, HamiltonianOperator):
            H = HamiltonianOperator.from_matrix(H)
        self.H = H
        self.spectral = spectral
        self.dt = dt
        if H.form == "grid_operator" and not H.has_potential:
            self.method = "dispersive_exact"
            self.spectral_radius = float(np.max(np.abs(H.kinetic.values)))
        elif spectral is not None or H.size <= DENSE_CAP:
            self.method = "exact_diagonal"
            if self.spectral is None:
                self.spectral = diagonalize(H, classify=False)
            self.spectral_radius = float(np.max(np.abs(self.spectral.eigenvalues)))
        else:
            if dt is None:
                raise ValueError("a time step is needed for split-operator propagation")
            self.method = "split_operator"
            self.spectral_radius = float(np.max(np.abs(H.kinetic.values))
                                         + np.max(np.abs(H.potential)))

    def __call__(self, t, v):
        v = np.asarray(v)
        if t == 0:
            return v.astype(complex)
        H = self.H
        if self.method == "exact_diagonal":
            return self.spectral.evolve(t, v.reshape(-1)).reshape(v.shape)
        grid = H.grid
        a = v.reshape(grid.shape)
        if self.method == "dispersive_exact":
            out = grid.ifft(np.exp(-1j * t * H.kinetic.values) * grid.fft(a))
        else:
            cfg = PropagatorConfig("split_operator", min(self.dt, abs(t)), t,
                                   record_every=10**9)
            out = evolve_split_operator(H, a, cfg, monitor=None).states[-1]
        return out.reshape(v.shape)


@dataclass
class FieldState:
    """Classical Klein-Gordon field ``q`` and its time derivative on a grid."""

    grid: Grid
    q: np.ndarray
    qdot: np.ndarray
    c: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        self.q = np.broadcast_to(np.asarray(self.q, dtype=float), self.grid.shape).copy()
        self.qdot = np.broadcast_to(np.asarray(self.qdot, dtype=float), self.grid.shape).copy()
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")

    def omega_squared(self) -> np.ndarray:
        k2 = sum(k**2 for k in self.grid.momenta)
        return self.c**2 * k2 + self.c**4 * self.mu**2 + np.zeros(self.grid.shape)

    def energy(self) -> float:
        return field_energy(self.grid, self.q, self.qdot, self.c, self.mu)


def field_energy(grid: Grid, q, qdot, c, mu) -> float:
    """``1/2 int (qdot**2 + c**2 |grad q|**2 + c**4 mu**2 q**2) dx``."""
    k2 = sum(k**2 for k in grid.momenta)
    qk = grid.fft(q)
    grad2 = np.sum(k2 * np.abs(qk) ** 2)
    return float(0.5 * grid.cell_volume * (np.sum(qdot**2) + c**2 * grad2
                                           + c**4 * mu**2 * np.sum(q**2)))


def kg_max_step(grid: Grid, c, mu) -> float:
    """Largest admissible leapfrog step: 90% of ``2 / omega_max``."""
    kmax2 = grid.dims * (np.pi / grid.spacing) ** 2
    return KG_CFL_MARGIN * 2.0 / (c * np.sqrt(kmax2 + (c * mu) ** 2))


def evolve_klein_gordon(field_state: FieldState, config: PropagatorConfig) -> Trajectory:
    """Leapfrog (kick-drift-kick) for ``q'' = c**2 Lap q - c**4 mu**2 q``.

    The Laplacian is spectral, so the scheme decouples into independent
    Fourier modes; it is advanced mode by mode.
    """
    fs = field_state
    grid = fs.grid
    h = config.step
    if abs(h) > kg_max_step(grid, fs.c, fs.mu):
        raise PreconditionError(
            f"time step {abs(h)} violates the leapfrog stability bound "
            f"{kg_max_step(grid, fs.c, fs.mu):.6g}")
    w2 = fs.omega_squared()
    q = grid.fft(fs.q)
    v = grid.fft(fs.qdot)
    rec = set(config.record_steps().tolist())
    times = [0.0]
    states = [np.stack([fs.q, fs.qdot])]
    v = v - 0.5 * h * w2 * q
    for s in range(1, config.n_steps + 1):
        q = q + h * v
        if s in rec:
            v_full = v - 0.5 * h * w2 * q
            times.append(s * h)
            states.append(np.stack([grid.ifft(q).real, grid.ifft(v_full).real]))
            v = v_full - 0.5 * h * w2 * q
        else:
            v = v - h * w2 * q
    return Trajectory(np.array(times), np.array(states), grid, "kg_leapfrog",
                      {"c": fs.c, "mu": fs.mu, "dt": abs(h)})


def kg_energies(traj: Trajectory) -> np.ndarray:
    c, mu = traj.meta["c"], traj.meta["mu"]
    return np.array([field_energy(traj.grid, s[0], s[1], c, mu) for s in traj.states])


class Residual(NamedTuple):
    max_residual: float
    order: float


def schrodinger_residual(traj: Trajectory, H) -> Residual:
    """Max of ``||(1/i) dpsi/dt + H psi||`` with centred differences.

    The order is ``log2`` of the ratio between the residual computed with
    double spacing (every other snapshot) and with the native spacing; it is
    NaN when fewer than five snapshots are available.
    """
    n = len(traj.times)
    if n < 3:
        raise ValueError("need at least three snapshots")
    dts = np.diff(traj.times)
    if np.ptp(dts) > 1e-9 * abs(dts[0]):
        raise ValueError("snapshots must be uniformly spaced")
    delta = dts[0]
    if not isinstance(H, HamiltonianOperator):
        H = HamiltonianOperator.from_matrix(H)
    w = traj.grid.cell_volume if traj.grid is not None else 1.0

    def worst(stride):
        out = 0.0
        for i in range(stride, n - stride):
            d = (traj.states[i + stride] - traj.states[i - stride]) / (2 * stride * delta)
            r = -1j * d + H.apply(traj.states[i])
            out = max(out, float(np.sqrt(np.sum(np.abs(r) ** 2) * w)))
        return out

    fine = worst(1)
    order = np.nan
    if n >= 5:
        coarse = worst(2)
        if fine > 0 and coarse > 0:
            order = float(np.log2(coarse / fine))
    return Residual(fine, order)


@dataclass
class TwoClocksReport:
    times: np.ndarray
    centers: dict
    widths: dict
    slopes: dict
    width_growth: dict
    momentum: float

    def as_dict(self):
        return {"momentum": self.momentum, "center_speed": self.slopes,
                "width_growth_rate": self.width_growth}


CLOCKS = {
    "wave": half_laplacian_multiplier,
    "schrodinger": lambda g: kinetic_multiplier(g, 1.0),
}


def two_clocks_compare(psi0: WaveFunction, t_final, n_records=101,
                       monitor=BOUNDARY_THRESHOLD) -> TwoClocksReport:
    """Evolve one packet under ``|k|`` and ``k**2/2`` and compare the motion.

    Reports the centre ``<x>(t)``, the width ``sigma(t)``, the fitted centre
    speed and the mean width growth rate ``(sigma(T) - sigma(0)) / T`` for
    each clock.
    """
    grid = psi0.grid
    if grid.dims != 1:
        raise ValueError("two_clocks_compare works on 1-d grids")
    psi0 = psi0.to_position()
    if boundary_mass(grid, psi0.amplitudes) > (monitor or BOUNDARY_THRESHOLD):
        raise PreconditionError("packet too wide for the domain")
    cfg = PropagatorConfig("dispersive_exact", abs(t_final) / (n_records - 1), t_final)
    k_mean = float(psi0.inner(WaveFunction(grid, grid.ifft(
        grid.k1d * grid.fft(psi0.amplitudes)))).real)
    centers, widths, slopes, growth = {}, {}, {}, {}
    times = None
    for name, make in CLOCKS.items():
        traj = evolve_dispersive(make(grid), psi0, cfg)
        for i, s in enumerate(traj.states):
            _check_monitor(grid, s, monitor, lambda: traj)
        dens = np.abs(traj.states) ** 2 * grid.cell_volume
        x = grid.x1d
        mean = dens @ x
        var = dens @ x**2 - mean**2
        times = traj.times
        centers[name] = mean
        widths[name] = np.sqrt(np.maximum(var, 0.0))
        slopes[name] = float(np.polyfit(times, mean, 1)[0])
        growth[name] = float((widths[name][-1] - widths[name][0]) / times[-1])
    return TwoClocksReport(times, centers, widths, slopes, growth, k_mean)
