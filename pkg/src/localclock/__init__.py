"""Local clocks: propagators, spectral tools and scattering diagnostics on periodic grids."""
from .clock import LocalClock, PropagatorConfig, Trajectory
from .grid import Grid, WaveFunction, gaussian_packet, make_grid
from .nbody import HamiltonianOperator, Potential, assemble_relative_hamiltonian, jacobi_frame
from .spectral import diagonalize

__version__ = "0.1.0"

__all__ = ["Grid", "HamiltonianOperator", "LocalClock", "Potential", "PropagatorConfig",
           "Trajectory", "WaveFunction", "assemble_relative_hamiltonian", "diagonalize",
           "gaussian_packet", "jacobi_frame", "make_grid", "__version__"]
