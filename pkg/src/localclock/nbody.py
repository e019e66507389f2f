"""Relative-motion Hamiltonians of closed N-particle systems.

Particle coordinates are mapped to Jacobi coordinates ``(X_C, x_1, ...,
x_{N-1})`` with ``x_i = r_{i+1} - centroid(r_1..r_i)``.  The kinetic energy
then splits into a centre-of-mass term ``P_C**2 / (2 M)`` and
``sum_i p_i**2 / (2 mu_i)``, and every pair distance ``r_i - r_j`` is a linear
combination of the ``x_k`` alone.

On a lattice, a relative Hamiltonian for ``N`` particles in ``d`` spatial
dimensions lives on a grid with ``d*(N-1)`` axes; Jacobi coordinate ``k``
occupies axes ``k*d .. (k+1)*d - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import GridError, SizeCapError
from .grid import FourierMultiplier, Grid, make_grid

DENSE_CAP = 4096

POTENTIAL_KINDS = {
    "none": (),
    "harmonic": ("omega",),
    "gaussian_well": ("depth", "width"),
    "soft_coulomb": ("charge", "softening"),
    "square_barrier": ("height", "width"),
}


@dataclass(frozen=True)
class Potential:
    """Radial pair potential ``V(|x|)``.

    ``harmonic``        0.5 * omega**2 * r**2
    ``gaussian_well``   -depth * exp(-(r/width)**2)
    ``soft_coulomb``    -charge / sqrt(r**2 + softening**2)
    ``square_barrier``  height for r < width/2, else 0

    A ``soft_coulomb`` softening of ``None`` is resolved to twice the grid
    spacing when the Hamiltonian is assembled.
    """

    kind: str = "none"
    params: Mapping[str, float | None] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        allowed = POTENTIAL_KINDS[self.kind]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise ValueError(f"{self.kind} does not take parameters {sorted(unknown)}")
        params = dict(self.params)
        if self.kind == "soft_coulomb":
            params.setdefault("softening", None)
            if params["softening"] is not None and not params["softening"] > 0:
                raise ValueError("soft_coulomb softening must be positive")
        missing = [p for p in allowed if p not in params]
        if missing:
            raise ValueError(f"{self.kind} requires parameters {missing}")
        for name in ("width",):
            if name in params and not params[name] > 0:
                raise ValueError(f"{self.kind} {name} must be positive")
        object.__setattr__(self, "params", params)

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def harmonic(cls, omega):
        return cls("harmonic", {"omega": omega})

    @classmethod
    def gaussian_well(cls, depth, width):
        return cls("gaussian_well", {"depth": depth, "width": width})

    @classmethod
    def soft_coulomb(cls, charge, softening=None):
        return cls("soft_coulomb", {"charge": charge, "softening": softening})

    @classmethod
    def square_barrier(cls, height, width):
        return cls("square_barrier", {"height": height, "width": width})

    @property
    def decays(self) -> bool:
        """Whether V tends to zero at large separation."""
        return self.kind != "harmonic"

    def resolved(self, spacing) -> "Potential":
        if self.kind == "soft_coulomb" and self.params["softening"] is None:
            return Potential.soft_coulomb(self.params["charge"], 2.0 * spacing)
        return self

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "none":
            return np.zeros_like(r)
        if self.kind == "harmonic":
            return 0.5 * p["omega"] ** 2 * r**2
        if self.kind == "gaussian_well":
            return -p["depth"] * np.exp(-((r / p["width"]) ** 2))
        if self.kind == "soft_coulomb":
            if p["softening"] is None:
                raise ValueError("soft_coulomb softening unresolved; call resolved(spacing)")
            return -p["charge"] / np.sqrt(r**2 + p["softening"] ** 2)
        return np.where(r < 0.5 * p["width"], float(p["height"]), 0.0)


def _check_pairs(n_particles, potentials):
    for pair in potentials:
        i, j = pair
        if not (0 <= i < j < n_particles):
            raise ValueError(
                f"potential references invalid pair {pair} for {n_particles} particles")


@dataclass(frozen=True)
class ParticleSystem:
    masses: tuple[float, ...]
    pair_potentials: Mapping[tuple[int, int], Potential] = field(default_factory=dict)

    def __post_init__(self):
        masses = tuple(float(m) for m in self.masses)
        if len(masses) < 2:
            raise ValueError("a particle system needs at least two particles")
        if any(not m > 0 for m in masses):
            raise ValueError("masses must be positive")
        _check_pairs(len(masses), self.pair_potentials)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "pair_potentials", dict(self.pair_potentials))


@dataclass(frozen=True, eq=False)
class JacobiFrame:
    """Jacobi coordinate map for a list of masses.

    ``transform @ r`` gives ``(X_C, x_1, ..., x_{N-1})``; ``inverse`` maps back.
    The fields are public so a deliberately inconsistent frame can be built
    for negative controls.
    """

    masses: np.ndarray
    reduced_masses: np.ndarray
    transform: np.ndarray
    inverse: np.ndarray

    @property
    def n_particles(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def pair_coefficients(self, i, j) -> np.ndarray:
        """Coefficients ``c`` with ``r_i - r_j = sum_k c_k x_k``."""
        return self.inverse[i, 1:] - self.inverse[j, 1:]

    def with_reduced_masses(self, reduced_masses) -> "JacobiFrame":
        return JacobiFrame(self.masses, np.asarray(reduced_masses, dtype=float),
                           self.transform, self.inverse)


def jacobi_frame(masses) -> JacobiFrame:
    m = np.asarray(masses, dtype=float)
    if m.ndim != 1 or len(m) < 2:
        raise ValueError("need at least two masses")
    if np.any(~(m > 0)):
        raise ValueError("masses must be positive")
    n = len(m)
    partial = np.cumsum(m)
    T = np.zeros((n, n))
    T[0] = m / partial[-1]
    for i in range(1, n):
        T[i, :i] = -m[:i] / partial[i - 1]
        T[i, i] = 1.0
    mu = 1.0 / (1.0 / m[1:] + 1.0 / partial[:-1])
    return JacobiFrame(m, mu, T, np.linalg.inv(T))


class HamiltonianOperator:
    """Self-adjoint operator, either kinetic multiplier + local potential on a
    grid, or a dense Hermitian matrix.

    Vectors passed to :meth:`apply` may be flat (length ``size``) or, for grid
    operators, shaped like the grid.
    """

    def __init__(self, *, kinetic: FourierMultiplier | None = None,
                 potential: np.ndarray | None = None,
                 matrix: np.ndarray | None = None,
                 axis_masses=None, potential_decays: bool | None = None,
                 name: str = "H"):
        if matrix is not None:
            if kinetic is not None or potential is not None:
                raise ValueError("give either a matrix or a grid operator, not both")
            matrix = np.asarray(matrix, dtype=complex)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError("matrix must be square")
            self.form = "dense_matrix"
            self.grid = None
        else:
            if kinetic is None:
                raise ValueError("grid operator needs a kinetic multiplier")
            self.form = "grid_operator"
            self.grid = kinetic.grid
            if potential is not None:
                potential = np.broadcast_to(
                    np.asarray(potential, dtype=float), self.grid.shape).copy()
                potential.setflags(write=False)
        self.kinetic = kinetic
        self.potential = potential
        self.matrix = matrix
        self.axis_masses = None if axis_masses is None else \
            np.asarray(axis_masses, dtype=float)
        self.potential_decays = potential_decays
        self.name = name

    @classmethod
    def from_matrix(cls, matrix, name="H"):
        return cls(matrix=matrix, name=name)

    @property
    def size(self) -> int:
        return self.matrix.shape[0] if self.form == "dense_matrix" else self.grid.size

    @property
    def is_splittable(self) -> bool:
        return self.form == "grid_operator"

    @property
    def has_potential(self) -> bool:
        return self.potential is not None and bool(np.any(self.potential != 0))

    def apply(self, v):
        v = np.asarray(v)
        if self.form == "dense_matrix":
            return self.matrix @ v
        flat = v.shape == (self.size,)
        a = v.reshape(self.grid.shape) if flat else v
        out = self.kinetic.apply(a)
        if self.potential is not None:
            out = out + self.potential * a
        return out.reshape(-1) if flat else out

    def __repr__(self):
        return f"HamiltonianOperator({self.name!r}, form={self.form}, size={self.size})"


def free_hamiltonian(grid: Grid, mass=1.0) -> HamiltonianOperator:
    from .grid import kinetic_multiplier
    masses = np.broadcast_to(np.asarray(mass, dtype=float), (grid.dims,))
    return HamiltonianOperator(kinetic=kinetic_multiplier(grid, masses),
                               axis_masses=masses, potential_decays=True, name="H0")


def _spatial_dim(frame: JacobiFrame, grid: Grid) -> int:
    n_rel = frame.n_particles - 1
    if grid.dims % n_rel:
        raise GridError(
            f"grid with {grid.dims} axes cannot hold {n_rel} Jacobi coordinates")
    return grid.dims // n_rel


def pair_distance(frame: JacobiFrame, grid: Grid, i, j) -> np.ndarray:
    """``|r_i - r_j|`` evaluated on the Jacobi lattice."""
    d = _spatial_dim(frame, grid)
    coef = frame.pair_coefficients(i, j)
    r2 = np.zeros(grid.shape)
    for s in range(d):
        comp = sum(c * grid.coords[k * d + s] for k, c in enumerate(coef))
        r2 = r2 + comp**2
    return np.sqrt(r2)


def assemble_relative_hamiltonian(frame: JacobiFrame, grid: Grid,
                                  potentials: Mapping[tuple[int, int], Potential]
                                  ) -> HamiltonianOperator:
    """Relative Hamiltonian ``sum_i p_i**2/(2 mu_i) + sum_{i<j} V_ij(r_i - r_j)``."""
    _check_pairs(frame.n_particles, potentials)
    d = _spatial_dim(frame, grid)
    axis_masses = np.repeat(frame.reduced_masses, d)

    def symbol(ks):
        return sum(k**2 / (2 * m) for k, m in zip(ks, axis_masses))

    kinetic = FourierMultiplier(grid, symbol, "relative_kinetic")
    V = np.zeros(grid.shape)
    decays = True
    for (i, j), pot in potentials.items():
        pot = pot.resolved(grid.spacing)
        V = V + pot(pair_distance(frame, grid, i, j))
        decays = decays and pot.decays
    return HamiltonianOperator(kinetic=kinetic, potential=V, axis_masses=axis_masses,
                               potential_decays=decays, name="H_rel")


def _circulant_kernel(grid: Grid, symbol_values) -> np.ndarray:
    """Dense matrix of a Fourier multiplier via its convolution kernel."""
    kernel = np.fft.ifftn(symbol_values).ravel()
    idx = np.unravel_index(np.arange(grid.size), grid.shape)
    strides = [grid.n ** (grid.dims - 1 - a) for a in range(grid.dims)]
    flat = np.zeros((grid.size, grid.size), dtype=np.int64)
    for a in range(grid.dims):
        u = idx[a]
        flat += ((u[:, None] - u[None, :]) % grid.n) * strides[a]
    return kernel[flat]


def densify(H: HamiltonianOperator, cap=DENSE_CAP) -> np.ndarray:
    """Matrix ``M[a, b] = <delta_a, H delta_b>`` in the unweighted lattice basis."""
    if H.size > cap:
        raise SizeCapError(f"operator of size {H.size} exceeds dense cap {cap}")
    if H.form == "dense_matrix":
        return H.matrix.copy()
    M = _circulant_kernel(H.grid, H.kinetic.values)
    if H.potential is not None:
        M[np.diag_indices_from(M)] += H.potential.ravel()
    return M


@dataclass
class SeparationReport:
    full_eigenvalues: np.ndarray
    summed_eigenvalues: np.ndarray
    max_mismatch: float
    tolerance: float
    passed: bool

    def as_dict(self):
        return {"max_mismatch": self.max_mismatch, "tolerance": self.tolerance,
                "passed": self.passed, "n_eigenvalues": int(len(self.full_eigenvalues))}


def com_separation_check(system: ParticleSystem, grid: Grid, frame: JacobiFrame | None = None,
                         tol=1e-8) -> SeparationReport:
    """Compare the two-particle spectrum with sums of COM and relative spectra.

    The two-particle Hamiltonian is built on the ``(X_C, x_1)`` tensor lattice
    directly from the particle form ``sum_i p_{r_i}**2 / (2 m_i) + V(r_1 - r_2)``:
    particle momenta are obtained from lattice momenta through the transpose
    of ``frame.transform`` and the pair distance through ``frame.inverse``.
    Nothing about the separation is assumed, so any inconsistency in the frame
    (wrong reduced mass, wrong transform) shows up as a spectral mismatch.
    """
    if len(system.masses) != 2 or grid.dims != 1:
        raise ValueError("com_separation_check supports two particles in one dimension")
    if grid.n > 64:
        raise SizeCapError("use n <= 64 so the two-particle lattice stays densifiable")
    frame = frame or jacobi_frame(system.masses)
    m = np.asarray(system.masses, dtype=float)
    grid2 = make_grid(2, grid.n, grid.extent)
    T = frame.transform

    def particle_kinetic(ks):
        p = [T[0, i] * ks[0] + T[1, i] * ks[1] for i in range(2)]
        return sum(p[i] ** 2 / (2 * m[i]) for i in range(2))

    V2 = np.zeros(grid2.shape)
    V1 = np.zeros(grid.shape)
    for (i, j), pot in system.pair_potentials.items():
        pot = pot.resolved(grid.spacing)
        coef = frame.inverse[i] - frame.inverse[j]
        V2 = V2 + pot(np.abs(coef[0] * grid2.coords[0] + coef[1] * grid2.coords[1]))
        V1 = V1 + pot(np.abs(frame.pair_coefficients(i, j)[0] * grid.coords[0]))
    full = HamiltonianOperator(kinetic=FourierMultiplier(grid2, particle_kinetic), potential=V2)
    com = HamiltonianOperator(kinetic=FourierMultiplier(
        grid, lambda ks: ks[0] ** 2 / (2 * frame.total_mass)))
    rel = HamiltonianOperator(kinetic=FourierMultiplier(
        grid, lambda ks: ks[0] ** 2 / (2 * frame.reduced_masses[0])), potential=V1)

    ev_full = np.linalg.eigvalsh(densify(full))
    ev_sum = np.sort(np.add.outer(np.linalg.eigvalsh(densify(com)),
                                  np.linalg.eigvalsh(densify(rel))).ravel())
    mismatch = float(np.max(np.abs(ev_full - ev_sum)))
    return SeparationReport(ev_full, ev_sum, mismatch, tol, mismatch <= tol)
