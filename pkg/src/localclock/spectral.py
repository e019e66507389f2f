"""Eigen-decompositions, spectral projectors and time averages.

Everything here acts on flat vectors in the unweighted lattice basis (the
basis in which :func:`localclock.nbody.densify` writes matrices).  For a
normalized :class:`~localclock.grid.WaveFunction` use :func:`as_vector` to get
the corresponding unit vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import signal as sps

from .errors import ClassificationError, PreconditionError, SizeCapError
from .grid import Grid, WaveFunction
from .nbody import DENSE_CAP, HamiltonianOperator, densify

CLUSTER_TOL = 1e-9
DEFAULT_TOL_ENERGY = 1e-6


def as_vector(psi: WaveFunction) -> np.ndarray:
    """Unit-normalized lattice vector of a position-space wave function."""
    psi = psi.to_position()
    return psi.amplitudes.ravel() * np.sqrt(psi.grid.cell_volume)


def from_vector(v, grid: Grid) -> WaveFunction:
    return WaveFunction(grid, np.asarray(v).reshape(grid.shape) / np.sqrt(grid.cell_volume))


@dataclass(frozen=True, eq=False)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    grid: Grid | None = None
    potential_decays: bool | None = None
    second_moments: np.ndarray | None = None
    classification: tuple[str, ...] | None = None

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def coefficients(self, v) -> np.ndarray:
        """Expansion coefficients ``<v_j, v>``."""
        return self.eigenvectors.conj().T @ v

    def apply_function(self, f: Callable[[np.ndarray], np.ndarray], v) -> np.ndarray:
        """``f(H) v`` through the eigen-decomposition."""
        return self.eigenvectors @ (f(self.eigenvalues) * self.coefficients(v))

    def evolve(self, t, v) -> np.ndarray:
        """``exp(-i t H) v``."""
        return self.apply_function(lambda lam: np.exp(-1j * t * lam), v)

    def clusters(self, tol=CLUSTER_TOL) -> list[np.ndarray]:
        """Index groups of (numerically) degenerate eigenvalues."""
        lam = self.eigenvalues
        breaks = np.nonzero(np.diff(lam) > tol)[0] + 1
        return np.split(np.arange(len(lam)), breaks)


def diagonalize(H, cap=DENSE_CAP, classify=True) -> SpectralData:
    """Full eigen-decomposition of a Hermitian operator or matrix."""
    grid = None
    decays = None
    if isinstance(H, HamiltonianOperator):
        M = densify(H, cap)
        grid = H.grid
        decays = H.potential_decays
    else:
        M = np.asarray(H)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("expected a square matrix")
        if M.shape[0] > cap:
            raise SizeCapError(f"matrix of size {M.shape[0]} exceeds dense cap {cap}")
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.conj().T), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")
    if np.iscomplexobj(M) and not np.any(M.imag):
        M = M.real
    lam, vecs = np.linalg.eigh(M)
    moments = None
    if grid is not None:
        moments = grid.radius_squared.ravel() @ (np.abs(vecs) ** 2)
    sd = SpectralData(lam, vecs, grid, decays, moments)
    if classify and grid is not None and decays:
        sd = _with_classification(sd, DEFAULT_TOL_ENERGY, None)
    return sd


class Projector:
    """Orthogonal projector given by an orthonormal spanning set (columns)."""

    def __init__(self, basis: np.ndarray, size: int | None = None):
        basis = np.asarray(basis)
        if basis.ndim == 1:
            basis = basis[:, None]
        self.basis = basis
        self.size = basis.shape[0] if size is None else size

    @classmethod
    def zero(cls, size):
        return cls(np.zeros((size, 0)), size)

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def apply(self, v) -> np.ndarray:
        if self.rank == 0:
            return np.zeros(np.shape(v), dtype=complex)
        return self.basis @ (self.basis.conj().T @ v)

    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    def __repr__(self):
        return f"Projector(rank={self.rank}, size={self.size})"


def _projector_from(sd: SpectralData, mask) -> Projector:
    return Projector(sd.eigenvectors[:, mask], sd.size)


def spectral_projector(sd: SpectralData, a, b) -> Projector:
    """Projector onto eigenvalues in the half-open interval ``(a, b]``."""
    if not a < b:
        raise ValueError("interval requires a < b")
    lam = sd.eigenvalues
    return _projector_from(sd, (lam > a) & (lam <= b))


def eigenprojector(sd: SpectralData, lam, tol=CLUSTER_TOL) -> Projector:
    """``P(lam)``: projector onto the full eigenspace at ``lam`` (rank 0 if none)."""
    return _projector_from(sd, np.abs(sd.eigenvalues - lam) <= tol)


def _with_classification(sd: SpectralData, tol_energy, radius) -> SpectralData:
    radius = sd.grid.extent / 4 if radius is None else radius
    bound = (sd.eigenvalues < -tol_energy) & (sd.second_moments < radius**2)
    labels = tuple("bound" if b else "continuum_proxy" for b in bound)
    return SpectralData(sd.eigenvalues, sd.eigenvectors, sd.grid, sd.potential_decays,
                        sd.second_moments, labels)


def classify_subspaces(sd: SpectralData, tol_energy=DEFAULT_TOL_ENERGY, radius=None
                       ) -> tuple[Projector, Projector]:
    """Split the lattice space into numerically-bound and continuum-proxy parts.

    An eigenpair counts as bound when its energy is below ``-tol_energy`` and
    its ``<|x|**2>`` is below ``radius**2`` (default radius ``L/4``).  This is
    only meaningful for potentials that vanish far from the origin.
    """
    if sd.grid is None:
        raise ClassificationError("classification needs a grid operator")
    if not sd.potential_decays:
        raise ClassificationError(
            "potential does not decay to zero; bound/continuum split is undefined")
    labelled = _with_classification(sd, tol_energy, radius)
    bound = np.array([c == "bound" for c in labelled.classification])
    return _projector_from(sd, bound), _projector_from(sd, ~bound)


def ergodic_projector(evolver: Callable, lam, T, probes, spread=None, step=None):
    """Time average ``(1/T) int_0^T exp(-i t lam) exp(i t H) psi dt``.

    ``evolver(t, v)`` must return ``exp(-i t H) v``.  The integral uses the
    composite trapezoid rule with step at most ``pi / (4 * spread)``, where
    ``spread`` bounds ``|lambda_j - lam|`` over the spectrum; when omitted it
    is taken from ``evolver.spectral_radius + |lam|``.
    """
    if not T > 0:
        raise ValueError("averaging time T must be positive")
    if spread is None:
        radius = getattr(evolver, "spectral_radius", None)
        if radius is None:
            raise ValueError("spread is required when the evolver has no spectral_radius")
        spread = radius + abs(lam)
    h_max = np.pi / (4 * max(spread, 1e-300))
    if step is not None and step > h_max:
        raise PreconditionError(
            f"quadrature step {step} too coarse for spectral spread {spread} (max {h_max})")
    h = h_max if step is None else step
    n_steps = max(1, int(np.ceil(T / h - 1e-12)))
    ts = np.linspace(0.0, T, n_steps + 1)
    w = np.full(n_steps + 1, T / n_steps)
    w[[0, -1]] *= 0.5

    single = np.ndim(probes) == 1
    probes = [np.asarray(probes)] if single else [np.asarray(p) for p in probes]
    out = []
    for psi in probes:
        acc = np.zeros(psi.shape, dtype=complex)
        for t, wt in zip(ts, w):
            acc += wt * np.exp(-1j * t * lam) * evolver(-t, psi)
        out.append(acc / T)
    return out[0] if single else np.array(out)


@dataclass
class BeatSignal:
    times: np.ndarray
    signal: np.ndarray
    frequencies: np.ndarray
    power: np.ndarray
    peaks: np.ndarray
    dominant: float
    bin_width: float


def beat_signal(sd: SpectralData, coefficients, indices: Sequence[int], x_probe: int,
                t_grid, peak_fraction=0.05) -> BeatSignal:
    """Probability density at one lattice point for a finite superposition.

    ``coefficients[m]`` multiplies eigenvector ``indices[m]``.  The returned
    spectrum is that of the mean-subtracted, Hann-windowed signal in angular
    frequency; peaks above ``peak_fraction`` of the maximum are reported.
    """
    a = np.asarray(coefficients, dtype=complex)
    idx = np.asarray(indices, dtype=int)
    if a.shape != idx.shape:
        raise ValueError("coefficients and indices must have the same length")
    if abs(np.sum(np.abs(a) ** 2) - 1) > 1e-10:
        raise ValueError("coefficients must satisfy sum |a_j|^2 = 1")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 4:
        raise ValueError("t_grid needs at least four samples")
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * dt[0]:
        raise ValueError("t_grid must be uniform and increasing")
    dt = float(dt[0])
    energies = sd.eigenvalues[idx][np.abs(a) > 0]
    gaps = np.abs(np.subtract.outer(energies, energies))
    gaps = gaps[gaps > CLUSTER_TOL]
    span = dt * len(t)
    if len(gaps):
        if gaps.max() * dt >= np.pi:
            raise PreconditionError(
                f"time step {dt} aliases the largest gap {gaps.max()} (Nyquist)")
        if gaps.min() * span <= 2 * np.pi:
            raise PreconditionError(
                f"t_grid of length {span} cannot resolve the smallest gap {gaps.min()}")

    vals = sd.eigenvectors[x_probe, idx]
    amp = np.exp(-1j * np.outer(t, sd.eigenvalues[idx])) @ (a * vals)
    sig = np.abs(amp) ** 2
    if sd.grid is not None:
        sig = sig / sd.grid.cell_volume

    freqs = 2 * np.pi * np.fft.rfftfreq(len(t), dt)
    centered = sig - sig.mean()
    power = np.abs(np.fft.rfft(centered * np.hanning(len(t)))) ** 2
    bin_width = 2 * np.pi / span
    if np.ptp(sig) <= 1e-12 * max(1.0, abs(sig.mean())):
        peaks = np.array([])
    else:
        found, _ = sps.find_peaks(power, height=peak_fraction * power.max())
        peaks = freqs[found]
    dominant = float(freqs[np.argmax(power)]) if len(peaks) else 0.0
    return BeatSignal(t, sig, freqs, power, peaks, dominant, bin_width)
