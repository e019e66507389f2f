"""Uniform periodic lattices, wave functions and Fourier multipliers.

Positions are centred on the domain, ``x_j = -L/2 + j*dx``, and the dual
lattice uses the DFT ordering ``2*pi/L * (0, 1, ..., n/2-1, -n/2, ..., -1)``.
Momentum-representation amplitudes are the unitary (``norm="ortho"``) DFT of
the position amplitudes, so the same weight ``dx**dims`` gives the L2 norm in
both representations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import GridError, RepresentationError, SizeCapError

DEFAULT_CAP = 2**22
BOUNDARY_FRACTION = 0.1
BOUNDARY_THRESHOLD = 1e-3


def _is_power_of_two(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice of ``n**dims`` points on ``[-L/2, L/2)**dims``."""

    dims: int
    n: int
    extent: float
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.dims not in (1, 2, 3):
            raise GridError(f"dims must be 1, 2 or 3, got {self.dims}")
        if not _is_power_of_two(self.n) or self.n < 8:
            raise GridError(f"n must be a power of two >= 8, got {self.n}")
        if not self.extent > 0:
            raise GridError(f"extent must be positive, got {self.extent}")
        if self.n**self.dims > self.cap:
            raise SizeCapError(
                f"lattice size {self.n}**{self.dims} exceeds cap {self.cap}")

    @property
    def spacing(self) -> float:
        return self.extent / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dims

    @property
    def size(self) -> int:
        return self.n**self.dims

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dims

    @property
    def axes(self) -> tuple[int, ...]:
        """Trailing array axes holding the lattice (batch axes come first)."""
        return tuple(range(-self.dims, 0))

    @cached_property
    def x1d(self) -> np.ndarray:
        return -0.5 * self.extent + self.spacing * np.arange(self.n)

    @cached_property
    def k1d(self) -> np.ndarray:
        m = np.fft.fftfreq(self.n) * self.n
        return (2 * np.pi / self.extent) * m

    @property
    def kvalues(self) -> tuple[np.ndarray, ...]:
        return (self.k1d,) * self.dims

    def _open(self, values, axis):
        shape = [1] * self.dims
        shape[axis] = self.n
        return values.reshape(shape)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable position arrays, one per axis."""
        return tuple(self._open(self.x1d, a) for a in range(self.dims))

    @cached_property
    def momenta(self) -> tuple[np.ndarray, ...]:
        """Broadcastable momentum arrays, one per axis."""
        return tuple(self._open(self.k1d, a) for a in range(self.dims))

    @cached_property
    def radius_squared(self) -> np.ndarray:
        r2 = np.zeros(self.shape)
        for x in self.coords:
            r2 = r2 + x**2
        return r2

    def fft(self, a):
        return np.fft.fftn(a, axes=self.axes, norm="ortho")

    def ifft(self, a):
        return np.fft.ifftn(a, axes=self.axes, norm="ortho")

    def inner(self, phi, psi) -> complex:
        """Weighted L2 inner product ``<phi, psi>`` (antilinear in phi)."""
        return complex(np.vdot(phi, psi) * self.cell_volume)

    def norm(self, psi) -> float:
        return float(np.sqrt(np.sum(np.abs(psi) ** 2) * self.cell_volume))

    def boundary_mask(self, fraction=BOUNDARY_FRACTION) -> np.ndarray:
        """Points within the outer ``fraction`` of the domain along any axis."""
        edge = (0.5 - fraction) * self.extent
        mask = np.zeros(self.shape, dtype=bool)
        for x in self.coords:
            mask = mask | (np.abs(x) >= edge)
        return mask


def make_grid(dims, n, extent, cap=DEFAULT_CAP) -> Grid:
    return Grid(int(dims), n, float(extent), cap)


@dataclass(frozen=True)
class WaveFunction:
    grid: Grid
    amplitudes: np.ndarray
    representation: str = "position"

    def __post_init__(self):
        if self.representation not in ("position", "momentum"):
            raise RepresentationError(
                f"unknown representation {self.representation!r}")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != self.grid.shape:
            amps = amps.reshape(self.grid.shape)
        object.__setattr__(self, "amplitudes", amps)

    def norm(self) -> float:
        return self.grid.norm(self.amplitudes)

    def normalized(self) -> "WaveFunction":
        nrm = self.norm()
        if nrm == 0:
            raise ValueError("cannot normalize the zero wave function")
        return WaveFunction(self.grid, self.amplitudes / nrm, self.representation)

    def to_momentum(self) -> "WaveFunction":
        if self.representation == "momentum":
            return self
        return WaveFunction(self.grid, self.grid.fft(self.amplitudes), "momentum")

    def to_position(self) -> "WaveFunction":
        if self.representation == "position":
            return self
        return WaveFunction(self.grid, self.grid.ifft(self.amplitudes), "position")

    def inner(self, other: "WaveFunction") -> complex:
        if other.grid != self.grid:
            raise GridError("wave functions live on different grids")
        if other.representation != self.representation:
            other = other.to_momentum() if self.representation == "momentum" \
                else other.to_position()
        return self.grid.inner(self.amplitudes, other.amplitudes)


def _position_amplitudes(psi):
    if isinstance(psi, WaveFunction):
        if psi.representation != "position":
            raise RepresentationError("operation requires the position representation")
        return psi.grid, psi.amplitudes
    raise TypeError("expected a WaveFunction")


def apply_position(psi: WaveFunction, axis=0, origin=0.0) -> np.ndarray:
    """Multiply by the signed coordinate ``x_axis - origin``."""
    grid, amps = _position_amplitudes(psi)
    if not 0 <= axis < grid.dims:
        raise GridError(f"axis {axis} out of range for a {grid.dims}-d grid")
    return (grid.coords[axis] - origin) * amps


def apply_momentum(psi: WaveFunction, axis=0) -> np.ndarray:
    """Spectral derivative ``(1/i) d/dx_axis``."""
    grid, amps = _position_amplitudes(psi)
    if not 0 <= axis < grid.dims:
        raise GridError(f"axis {axis} out of range for a {grid.dims}-d grid")
    return grid.ifft(grid.momenta[axis] * grid.fft(amps))


@dataclass(frozen=True, eq=False)
class FourierMultiplier:
    """Operator acting as multiplication by ``symbol(k)`` on the dual lattice.

    ``symbol`` receives the tuple of broadcastable per-axis momentum arrays and
    must return real, finite values.
    """

    grid: Grid
    symbol: Callable[..., np.ndarray]
    name: str = "multiplier"
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vals = np.broadcast_to(
            np.asarray(self.symbol(self.grid.momenta)), self.grid.shape)
        if np.iscomplexobj(vals):
            if np.max(np.abs(vals.imag), initial=0.0) > 0:
                raise ValueError(f"symbol {self.name!r} is not real")
            vals = vals.real
        vals = np.array(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"symbol {self.name!r} is not finite on the lattice")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def apply(self, a: np.ndarray) -> np.ndarray:
        """Apply to position amplitudes; leading axes are treated as a batch."""
        g = self.grid
        return g.ifft(self.values * g.fft(a))

    def compose(self, f: Callable[[np.ndarray], np.ndarray], name=None) -> "FourierMultiplier":
        """Multiplier with symbol ``f(symbol(k))``."""
        return FourierMultiplier(self.grid, lambda ks: f(self.symbol(ks)),
                                 name or f"f({self.name})")


def apply_multiplier(m: FourierMultiplier, psi) -> np.ndarray:
    if isinstance(psi, WaveFunction):
        if psi.grid != m.grid:
            raise GridError("multiplier and wave function live on different grids")
        psi = psi.to_position().amplitudes
    else:
        psi = np.asarray(psi)
        if psi.shape[-m.grid.dims:] != m.grid.shape:
            raise GridError(
                f"array of shape {psi.shape} does not match grid shape {m.grid.shape}")
    return m.apply(psi)


# -- common symbols ----------------------------------------------------------

def _k_squared(ks):
    return sum(k**2 for k in ks)


def kinetic_multiplier(grid: Grid, mass=1.0) -> FourierMultiplier:
    """``sum_a k_a**2 / (2 m_a)``; ``mass`` may be a scalar or one value per axis."""
    masses = np.broadcast_to(np.asarray(mass, dtype=float), (grid.dims,))
    if np.any(masses <= 0):
        raise ValueError("masses must be positive")

    def symbol(ks):
        return sum(k**2 / (2 * m) for k, m in zip(ks, masses))

    return FourierMultiplier(grid, symbol, "kinetic")


def half_laplacian_multiplier(grid: Grid) -> FourierMultiplier:
    """``(-Laplacian)**(1/2)``, i.e. ``|k|``."""
    return FourierMultiplier(grid, lambda ks: np.sqrt(_k_squared(ks)), "abs_k")


def relativistic_multiplier(grid: Grid, c=1.0, mu=1.0) -> FourierMultiplier:
    """``c * sqrt(k**2 + c**2 mu**2)``."""
    return FourierMultiplier(
        grid, lambda ks: c * np.sqrt(_k_squared(ks) + (c * mu) ** 2), "relativistic")


# -- packets and monitors -------------------------------------------------------

def _per_axis(value, dims):
    return np.broadcast_to(np.asarray(value, dtype=float), (dims,))


def gaussian_packet(grid: Grid, center=0.0, width=1.0, momentum=0.0) -> WaveFunction:
    """Normalized Gaussian ``exp(-(x-x0)**2/(4 w**2) + i k0 x)`` (product over axes)."""
    x0 = _per_axis(center, grid.dims)
    w = _per_axis(width, grid.dims)
    k0 = _per_axis(momentum, grid.dims)
    amps = np.ones(grid.shape, dtype=complex)
    for x, c, s, k in zip(grid.coords, x0, w, k0):
        amps = amps * np.exp(-((x - c) ** 2) / (4 * s**2) + 1j * k * x)
    return WaveFunction(grid, amps).normalized()


def bump_packet(grid: Grid, center=0.0, width=1.0, momentum=0.0) -> WaveFunction:
    """Normalized compactly supported bump of radius ``width`` with plane-wave phase."""
    x0 = _per_axis(center, grid.dims)
    w = _per_axis(width, grid.dims)
    k0 = _per_axis(momentum, grid.dims)
    amps = np.ones(grid.shape, dtype=complex)
    for x, c, s, k in zip(grid.coords, x0, w, k0):
        u = (x - c) / s
        inside = np.abs(u) < 1
        prof = np.zeros_like(u)
        prof[inside] = np.exp(1 - 1 / (1 - u[inside] ** 2))
        amps = amps * prof * np.exp(1j * k * x)
    return WaveFunction(grid, amps).normalized()


def plane_wave(grid: Grid, mode: Sequence[int] | int) -> WaveFunction:
    """Normalized lattice plane wave with integer mode numbers per axis."""
    modes = np.broadcast_to(np.asarray(mode, dtype=int), (grid.dims,))
    phase = sum((2 * np.pi / grid.extent) * m * x for m, x in zip(modes, grid.coords))
    return WaveFunction(grid, np.exp(1j * phase) * np.ones(grid.shape)).normalized()


def boundary_mass(grid: Grid, amps: np.ndarray) -> float:
    """Probability within the outer boundary layer of the periodic domain."""
    return float(np.sum(np.abs(amps[..., grid.boundary_mask()]) ** 2) * grid.cell_volume)
