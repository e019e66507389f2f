"""Long-time diagnostics of scattering states.

For a state in the continuous subspace, three quantities should fade along
the clock: the mass inside any fixed ball, the difference between energy
cut-offs of the full and free Hamiltonians, and the mismatch between the
"mechanical" velocity ``x/t`` and ``p/mu``.  This module measures them on a
time grid and fits power laws to the decay.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .clock import LocalClock
from .errors import BoundStateError, MonitorAbort, PreconditionError
from .grid import (BOUNDARY_THRESHOLD, WaveFunction, apply_momentum, apply_position,
                   boundary_mass)
from .nbody import HamiltonianOperator
from .spectral import SpectralData, as_vector, classify_subspaces, diagonalize, from_vector


@dataclass(frozen=True)
class TestFunction:
    """Smooth bump ``exp(1 - 1/(1 - u**2))``, ``u = (lam - center)/halfwidth``."""

    __test__ = False

    center: float
    halfwidth: float

    def __post_init__(self):
        if not self.halfwidth > 0:
            raise ValueError("halfwidth must be positive")

    def __call__(self, lam):
        u = (np.asarray(lam, dtype=float) - self.center) / self.halfwidth
        out = np.zeros_like(u)
        inside = np.abs(u) < 1
        out[inside] = np.exp(1 - 1 / (1 - u[inside] ** 2))
        return out


def escape_norm(psi_t: WaveFunction, R) -> float:
    """L2 norm of ``psi_t`` restricted to the ball ``|x| < R``."""
    grid = psi_t.grid
    if not 0 < R < grid.extent / 2:
        raise ValueError(f"R must lie in (0, L/2) = (0, {grid.extent / 2})")
    psi_t = psi_t.to_position()
    inside = grid.radius_squared < R**2
    return float(np.sqrt(np.sum(np.abs(psi_t.amplitudes[inside]) ** 2) * grid.cell_volume))


def energy_mismatch(psi_t: WaveFunction, phi: TestFunction, H: HamiltonianOperator,
                    H0: HamiltonianOperator | None = None,
                    spectral: SpectralData | None = None) -> float:
    """``||phi(H) psi_t - phi(H0) psi_t||``.

    ``phi(H)`` goes through the eigen-decomposition of the densified ``H``
    (pass ``spectral`` to reuse one), ``phi(H0)`` through the free symbol.
    When ``H`` carries no potential both terms use the same symbol.
    """
    grid = psi_t.grid
    a = psi_t.to_position().amplitudes
    if H0 is None:
        H0 = HamiltonianOperator(kinetic=H.kinetic)
    free_part = H0.kinetic.compose(phi).apply(a)
    if not H.has_potential:
        full_part = H.kinetic.compose(phi).apply(a)
    else:
        sd = spectral if spectral is not None else diagonalize(H, classify=False)
        full_part = sd.apply_function(phi, a.ravel()).reshape(grid.shape)
    return grid.norm(full_part - free_part)


def velocity_mismatch(psi_t: WaveFunction, t, mu, origin=0.0) -> float:
    """``sqrt(sum_a ||(x_a/t - p_a/mu_a) psi_t||**2)``; ``mu`` scalar or per axis.

    ``origin`` is the launch point the distance is measured from.  Negative
    ``t`` is allowed (backward clock).
    """
    if t == 0:
        raise ValueError("t must be non-zero")
    grid = psi_t.grid
    psi_t = psi_t.to_position()
    mus = np.broadcast_to(np.asarray(mu, dtype=float), (grid.dims,))
    origins = np.broadcast_to(np.asarray(origin, dtype=float), (grid.dims,))
    total = 0.0
    for a in range(grid.dims):
        d = apply_position(psi_t, a, origins[a]) / t - apply_momentum(psi_t, a) / mus[a]
        total += grid.norm(d) ** 2
    return float(np.sqrt(total))


def expectation_x_p(psi: WaveFunction, axis=0, origin=0.0) -> tuple[float, float]:
    psi = psi.to_position()
    x = psi.grid.inner(psi.amplitudes, apply_position(psi, axis, origin)).real
    p = psi.grid.inner(psi.amplitudes, apply_momentum(psi, axis)).real
    return float(x), float(p)


@dataclass
class Calibration:
    times: np.ndarray
    t_hat: np.ndarray
    deviation: np.ndarray
    offset: float
    slope: float


def local_time_calibration(traj, mu, axis=0, origin=0.0, tiny=1e-10) -> Calibration:
    """Mechanical time ``t_hat = mu <x> / <p>`` along a trajectory.

    ``offset`` and ``slope`` come from a linear fit ``t_hat = slope*t + offset``.
    """
    xs, ps = [], []
    for i in range(len(traj)):
        x, p = expectation_x_p(traj.wavefunction(i), axis, origin)
        xs.append(x)
        ps.append(p)
    ps = np.array(ps)
    if np.any(np.abs(ps) < tiny) or np.any(np.sign(ps) != np.sign(ps[0])):
        raise PreconditionError("<p> vanishes or changes sign; calibration rejected")
    t = np.asarray(traj.times, dtype=float)
    t_hat = mu * np.array(xs) / ps
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.where(t != 0, np.abs(t_hat - t) / np.abs(t), np.nan)
    slope, offset = np.polyfit(t, t_hat, 1)
    return Calibration(t, t_hat, dev, float(offset), float(slope))


@dataclass
class PowerLawFit:
    exponent: float
    amplitude: float
    stderr: float
    t_min: float
    t_max: float
    residual: float

    @property
    def band(self) -> tuple[float, float]:
        """Approximate 95% band on the exponent."""
        return (self.exponent - 1.96 * self.stderr, self.exponent + 1.96 * self.stderr)


def fit_power_law(t, y) -> PowerLawFit:
    """Least squares ``log y = exponent * log|t| + log amplitude`` on positive ``y``."""
    t = np.abs(np.asarray(t, dtype=float))
    y = np.asarray(y, dtype=float)
    ok = y > 0
    if ok.sum() < 2:
        return PowerLawFit(np.nan, 0.0, np.nan, float(t.min()), float(t.max()), np.nan)
    X, Y = np.log(t[ok]), np.log(y[ok])
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = Y - A @ coef
    dof = max(len(X) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return PowerLawFit(float(coef[0]), float(np.exp(coef[1])), float(np.sqrt(cov[0, 0])),
                       float(t[ok].min()), float(t[ok].max()),
                       float(np.sqrt(np.mean(resid**2))))


def is_decreasing(y, atol=1e-12) -> bool:
    """Non-increasing up to ``atol`` and strictly lower at the end unless all ~0."""
    y = np.asarray(y, dtype=float)
    if np.all(np.abs(y) <= atol):
        return True
    return bool(np.all(np.diff(y) <= atol) and y[-1] < y[0])


SERIES = ("escape", "energy_mismatch", "velocity_mismatch")


@dataclass
class DiagnosticSeries:
    times: np.ndarray
    escape: np.ndarray
    energy_mismatch: np.ndarray
    velocity_mismatch: np.ndarray
    fits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def series(self, name) -> np.ndarray:
        return getattr(self, name)

    def decreasing(self) -> dict:
        return {name: is_decreasing(self.series(name)) for name in SERIES}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "escape", "energy_mismatch", "velocity_mismatch"])
            for row in zip(self.times, self.escape, self.energy_mismatch,
                           self.velocity_mismatch):
                w.writerow([f"{v:.17g}" for v in row])

    def fits_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "exponent", "amplitude", "stderr",
                        "fit_tmin", "fit_tmax", "residual"])
            for name in SERIES:
                f = self.fits[name]
                w.writerow([name] + [f"{v:.17g}" for v in (
                    f.exponent, f.amplitude, f.stderr, f.t_min, f.t_max, f.residual)])


def geometric_times(t_min, t_max, count, sign=1) -> np.ndarray:
    if not 0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")
    return sign * np.geomspace(t_min, t_max, count)


def run_theorem1_suite(H: HamiltonianOperator, psi0: WaveFunction, times, R,
                       phi: TestFunction | None = None, mu=None,
                       H0: HamiltonianOperator | None = None,
                       spectral: SpectralData | None = None,
                       continuum_threshold=0.99, filter_continuum=True,
                       origin=0.0, monitor=BOUNDARY_THRESHOLD, dt=None) -> DiagnosticSeries:
    """Escape, energy-cut-off and velocity diagnostics along ``times``.

    ``times`` is a monotone grid of one sign (negative runs the clock
    backwards).  With a potential present and ``filter_continuum`` set, the
    packet is projected onto the continuum proxy and renormalized; the run is
    refused when that keeps less than ``continuum_threshold`` of the weight.
    ``phi`` defaults to a bump centred at the packet's mean kinetic energy with
    half-width equal to that energy.  ``mu`` defaults to the reduced masses
    stored on ``H``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times == 0) or not (np.all(times > 0) or np.all(times < 0)):
        raise ValueError("times must be non-zero and of a single sign")
    if np.any(np.diff(np.abs(times)) <= 0):
        raise ValueError("|times| must be strictly increasing")
    grid = H.grid
    if mu is None:
        mu = H.axis_masses if H.axis_masses is not None else 1.0
    if H0 is None:
        H0 = HamiltonianOperator(kinetic=H.kinetic)

    psi = psi0.to_position().normalized()
    weight = 1.0
    if H.has_potential:
        if spectral is None:
            spectral = diagonalize(H)
        if filter_continuum:
            _, P_cont = classify_subspaces(spectral)
            v = P_cont.apply(as_vector(psi))
            weight = float(np.vdot(v, v).real)
            if weight < continuum_threshold:
                raise BoundStateError(
                    f"continuum weight {weight:.4f} below threshold {continuum_threshold}")
            psi = from_vector(v, grid).normalized()
    if phi is None:
        e_kin = psi.grid.inner(psi.amplitudes, H0.kinetic.apply(psi.amplitudes)).real
        phi = TestFunction(e_kin, e_kin)

    clock = LocalClock(H, dt=dt, spectral=spectral)
    rows = []

    def partial():
        return _series(times[:len(rows)], rows, phi, {"aborted": True})

    for t in times:
        a = clock(t, psi.amplitudes)
        mass = boundary_mass(grid, a)
        if monitor is not None and mass > monitor:
            raise MonitorAbort(
                f"boundary-layer mass {mass:.3e} at t={t:.6g} exceeds {monitor:.1e}",
                partial=partial(), boundary_mass=mass)
        psi_t = WaveFunction(grid, a)
        rows.append((escape_norm(psi_t, R),
                     energy_mismatch(psi_t, phi, H, H0, spectral),
                     velocity_mismatch(psi_t, t, mu, origin)))
    return _series(times, rows, phi, {"continuum_weight": weight, "R": R,
                                      "phi_center": phi.center,
                                      "phi_halfwidth": phi.halfwidth,
                                      "clock": clock.method})


def _series(times, rows, phi, meta):
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    ds = DiagnosticSeries(np.asarray(times, float), arr[:, 0], arr[:, 1], arr[:, 2],
                          meta=meta)
    if len(rows) >= 2:
        ds.fits = {name: fit_power_law(ds.times, ds.series(name)) for name in SERIES}
    return ds


def free_gaussian_velocity_mismatch(t, width, center=0.0, origin=0.0) -> np.ndarray:
    """Exact ``||(x/t - p/mu) psi(t)||`` for a free 1-d Gaussian.

    Free evolution gives ``x(t) = x + p t/mu`` in the Heisenberg picture, so
    the mismatch is ``||(x - origin) psi(0)|| / |t|``.
    """
    return np.sqrt(width**2 + (center - origin) ** 2) / np.abs(np.asarray(t, dtype=float))

