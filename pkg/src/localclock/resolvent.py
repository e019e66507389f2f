"""Resolvent, Stone-formula densities and the Fourier-Laplace transform of
the clock.

Inner products are the plain lattice ones (see :mod:`localclock.spectral`).
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import PreconditionError
from .nbody import HamiltonianOperator
from .spectral import (CLUSTER_TOL, SpectralData, diagonalize, eigenprojector,
                       ergodic_projector)

RESIDUAL_TOL = 1e-9
TAIL_TOL = 1e-6
SOLVERS = ("direct_dense", "shifted_solve_on_grid")


def _as_operator(H) -> HamiltonianOperator:
    return H if isinstance(H, HamiltonianOperator) else HamiltonianOperator.from_matrix(H)


def resolvent_apply(H, z, psi, solver=None) -> np.ndarray:
    """Solve ``(H - z) phi = psi``.

    ``direct_dense`` factorizes the matrix; ``shifted_solve_on_grid`` runs
    GMRES preconditioned by the exact inverse of the shifted kinetic term.
    Real ``z`` is accepted on the dense path only, and only away from the
    spectrum.
    """
    H = _as_operator(H)
    z = complex(z)
    psi = np.asarray(psi, dtype=complex)
    if solver is None:
        solver = "direct_dense" if H.form == "dense_matrix" else "shifted_solve_on_grid"
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")

    if solver == "direct_dense":
        from .nbody import densify
        M = densify(H)
        if z.imag == 0:
            gap = np.min(np.abs(np.linalg.eigvalsh(M) - z.real))
            if gap <= 1e-12:
                raise np.linalg.LinAlgError(f"z = {z.real} is an eigenvalue; (H - z) is singular")
        phi = np.linalg.solve(M - z * np.eye(M.shape[0]), psi.reshape(-1)).reshape(psi.shape)
    else:
        if H.form != "grid_operator":
            raise ValueError("shifted_solve_on_grid needs a grid operator")
        if z.imag == 0:
            raise PreconditionError("real z is only supported by the dense solver")
        grid = H.grid
        shifted = H.kinetic.values - z

        def precondition(v):
            a = v.reshape(grid.shape)
            return (grid.ifft(grid.fft(a) / shifted)).ravel()

        b = psi.reshape(-1)
        if not H.has_potential:
            phi = precondition(b)
        else:
            n = H.size
            A = LinearOperator((n, n), matvec=lambda v: H.apply(v) - z * v, dtype=complex)
            Minv = LinearOperator((n, n), matvec=precondition, dtype=complex)
            phi, info = gmres(A, b, rtol=1e-12, atol=0.0, M=Minv, restart=200, maxiter=50)
            if info != 0:
                raise RuntimeError(f"GMRES did not converge (info={info})")
        phi = phi.reshape(psi.shape)

    res = np.linalg.norm(H.apply(phi.reshape(-1)) - z * phi.reshape(-1) - psi.reshape(-1))
    if res > RESIDUAL_TOL * max(np.linalg.norm(psi), 1e-300):
        raise RuntimeError(f"resolvent residual {res:.3e} above tolerance")
    return phi


def stone_density(H, lam, eps, psi, solver=None) -> float:
    """``<psi, (R(lam + i eps) - R(lam - i eps)) psi> / (2 pi i)`` by two solves."""
    if not eps > 0:
        raise ValueError("broadening eps must be positive")
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    up = resolvent_apply(H, lam + 1j * eps, psi, solver)
    down = resolvent_apply(H, lam - 1j * eps, psi, solver)
    return float((np.vdot(psi, up - down) / (2j * np.pi)).real)


def broadened_measure(sd: SpectralData, lam, eps, psi) -> np.ndarray:
    """Lorentzian-broadened spectral measure from the eigen-decomposition."""
    w = np.abs(sd.coefficients(np.asarray(psi).reshape(-1))) ** 2
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    d = lam[:, None] - sd.eigenvalues[None, :]
    return (eps / np.pi) * (w / (d**2 + eps**2)).sum(axis=1)


def limiting_density(H, lam, psi, eps0=None, solver=None) -> float:
    """Boundary-value density from an eps-sweep ``{4, 2, 1} * eps0``.

    Quadratic Richardson extrapolation to ``eps -> 0``; ``eps0`` defaults to
    four times the mean level spacing.  On a finite lattice this is the
    broadened density with a documented eps policy, not a true limit.
    """
    if eps0 is None:
        from .nbody import densify
        ev = np.linalg.eigvalsh(densify(_as_operator(H)))
        eps0 = 4 * (ev[-1] - ev[0]) / (len(ev) - 1)
    f1, f2, f4 = (stone_density(H, lam, s * eps0, psi, solver) for s in (1, 2, 4))
    return (8 * f1 - 6 * f2 + f4) / 3


@dataclass
class DensityScan:
    lambdas: np.ndarray
    eps: float
    values: np.ndarray
    integral: float
    norm_squared: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "value", "eps"])
            for lam, v in zip(self.lambdas, self.values):
                w.writerow([f"{lam:.17g}", f"{v:.17g}", f"{self.eps:.17g}"])


def density_scan(H, lambda_grid, eps, psi, solver=None) -> DensityScan:
    lams = np.asarray(lambda_grid, dtype=float)
    if lams.ndim != 1 or len(lams) < 2:
        raise ValueError("lambda_grid needs at least two points")
    step = float(np.max(np.diff(lams)))
    if eps < 2 * step:
        raise PreconditionError(f"eps={eps} must be at least twice the grid step {step}")
    vals = np.array([stone_density(H, lam, eps, psi, solver) for lam in lams])
    integral = float(np.trapezoid(vals, lams))
    nrm2 = float(np.vdot(psi, psi).real)
    if integral < 0.9 * nrm2:
        warnings.warn(f"density integral {integral:.4g} misses more than 10% of "
                      f"||psi||^2 = {nrm2:.4g}; widen the lambda window", stacklevel=2)
    return DensityScan(lams, float(eps), vals, integral, nrm2)


def fourier_laplace_resolvent(evolver, z, psi, T_max, dt, spectral_radius=None,
                              branch=None) -> np.ndarray:
    """``R(z) psi = i int_0^{+-inf} exp(i t z) exp(-i t H) psi dt`` truncated at ``T_max``.

    The ``+`` branch (upper half plane) integrates forward in time, the ``-``
    branch backward.  Trapezoid rule with step ``dt``; the clock is advanced
    one step at a time.
    """
    z = complex(z)
    if z.imag == 0:
        raise PreconditionError("Im z = 0: the transform is not absolutely convergent")
    if branch is None:
        branch = "+" if z.imag > 0 else "-"
    if branch not in "+-" or len(branch) != 1:
        raise ValueError("branch must be '+' or '-'")
    if (branch == "+") != (z.imag > 0):
        raise PreconditionError(f"branch {branch!r} does not converge for Im z = {z.imag}")
    if not np.exp(-abs(z.imag) * T_max) < TAIL_TOL:
        raise PreconditionError(
            f"T_max={T_max} leaves a tail exp(-|Im z| T_max) >= {TAIL_TOL}")
    rho = spectral_radius if spectral_radius is not None else \
        getattr(evolver, "spectral_radius", None)
    if rho is None:
        raise ValueError("spectral_radius is required to check the step rule")
    if not dt * (abs(z) + rho) < 0.5:
        raise PreconditionError(f"dt={dt} does not resolve the fastest phase")
    return _fl_quadrature(evolver, z, psi, T_max, dt, 1 if branch == "+" else -1)


def _fl_quadrature(evolver, z, psi, T, dt, sign):
    n = max(1, int(np.ceil(T / dt - 1e-12)))
    h = T / n
    v = np.asarray(psi, dtype=complex)
    acc = 0.5 * v
    phase_step = np.exp(1j * sign * h * z)
    phase = 1.0 + 0j
    for m in range(1, n + 1):
        v = evolver(sign * h, v)
        phase *= phase_step
        acc = acc + (0.5 if m == n else 1.0) * phase * v
    return 1j * sign * h * acc


@dataclass
class TailFit:
    T_values: np.ndarray
    errors: np.ndarray
    rate: float
    expected_rate: float

    @property
    def relative_deviation(self) -> float:
        return abs(self.rate - self.expected_rate) / abs(self.expected_rate)


def fourier_laplace_tail(evolver, z, psi, T_values, dt, exact=None, H=None) -> TailFit:
    """Fit ``log ||FL_T - R(z) psi||`` against ``T``; expect slope ``-|Im z|``."""
    z = complex(z)
    if exact is None:
        exact = resolvent_apply(H, z, psi)
    sign = 1 if z.imag > 0 else -1
    T_values = np.asarray(T_values, dtype=float)
    errs = np.array([np.linalg.norm(_fl_quadrature(evolver, z, psi, T, dt, sign) - exact)
                     for T in T_values])
    rate = float(np.polyfit(T_values, np.log(errs), 1)[0])
    return TailFit(T_values, errs, rate, -abs(z.imag))


@dataclass
class EquivalenceReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def failed_checks(self) -> list[str]:
        return [c["name"] for c in self.checks if not c["passed"]]

    def as_dict(self):
        return {"passed": self.passed, "checks": self.checks}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _loglog_slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = y > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def equivalence_report(H, probes, z_set, lambda_set, T, eps, evolver=None,
                       lambda_grid=None, fl_dt=None, tol_fl=1e-3, tol_stone=1e-8,
                       ergodic_slack=1.1) -> EquivalenceReport:
    """Cross-check time-dependent and stationary routes on one operator.

    (a) ergodic time averages against exact eigenprojectors, with tolerance
        ``ergodic_slack * 2 ||psi|| / (T g)`` where ``g`` is the distance from
        ``lambda`` to the rest of the spectrum;
    (b) Fourier-Laplace transforms of the clock against direct solves
        (relative tolerance ``tol_fl``);
    (c) Stone densities from linear solves against the broadened measure from
        the eigen-decomposition (absolute tolerance ``tol_stone``).
    """
    from .clock import LocalClock

    H = _as_operator(H)
    sd = diagonalize(H, classify=False)
    if evolver is None:
        evolver = LocalClock(H, spectral=sd)
    rho = float(np.max(np.abs(sd.eigenvalues)))
    probes = [np.asarray(p, dtype=complex).reshape(-1) for p in probes]
    report = EquivalenceReport()

    errs, bounds, rates = [], [], []
    for lam in lambda_set:
        others = np.abs(sd.eigenvalues - lam)
        others = others[others > CLUSTER_TOL]
        gap = float(others.min()) if len(others) else np.inf
        P = eigenprojector(sd, lam)
        for psi in probes:
            exact = P.apply(psi)
            series = []
            for TT in (T, 2 * T, 4 * T):
                est = ergodic_projector(evolver, lam, TT, psi, spread=rho + abs(lam))
                series.append(float(np.linalg.norm(est - exact)))
            errs.append(series[0])
            bounds.append(ergodic_slack * 2 * np.linalg.norm(psi) / (T * gap))
            rates.append(_loglog_slope([T, 2 * T, 4 * T], series))
    report.checks.append({
        "name": "ergodic_vs_projector", "T": T,
        "max_error": max(errs), "tolerance": min(bounds),
        "errors": errs, "bounds": bounds, "fitted_rates": rates,
        "passed": bool(all(e <= b for e, b in zip(errs, bounds)))})

    rel_errs, tail_rates, expected = [], [], []
    for z in z_set:
        z = complex(z)
        dt = fl_dt if fl_dt is not None else 0.05 / (abs(z) + rho)
        T_max = 1.05 * np.log(1 / TAIL_TOL) / abs(z.imag)
        for psi in probes:
            direct = resolvent_apply(H, z, psi)
            fl = fourier_laplace_resolvent(evolver, z, psi, T_max, dt, rho)
            rel_errs.append(float(np.linalg.norm(fl - direct) / np.linalg.norm(direct)))
            fit = fourier_laplace_tail(evolver, z, psi,
                                       np.linspace(2, 8, 4) / abs(z.imag), dt, exact=direct)
            tail_rates.append(fit.rate)
            expected.append(fit.expected_rate)
    report.checks.append({
        "name": "fourier_laplace_vs_resolvent", "z": [[complex(z).real, complex(z).imag]
                                                      for z in z_set],
        "max_error": max(rel_errs), "tolerance": tol_fl, "errors": rel_errs,
        "fitted_tail_rates": tail_rates, "expected_tail_rates": expected,
        "passed": bool(max(rel_errs) <= tol_fl)})

    if lambda_grid is None:
        lambda_grid = np.linspace(sd.eigenvalues[0] - 5 * eps, sd.eigenvalues[-1] + 5 * eps, 41)
    worst = 0.0
    for psi in probes:
        oracle = broadened_measure(sd, lambda_grid, eps, psi)
        solved = np.array([stone_density(H, lam, eps, psi) for lam in lambda_grid])
        worst = max(worst, float(np.max(np.abs(solved - oracle))))
    report.checks.append({
        "name": "stone_vs_broadened_measure", "eps": eps,
        "max_error": worst, "tolerance": tol_stone, "passed": bool(worst <= tol_stone)})
    return report
