"""Simulation and analysis of single-excitation Jaynes-Cummings-Hubbard lattices."""

from ._kernels import backend
from .bands import bloch_energy, group_velocity, hopping_kernel, isoenergy_contour, surface_band
from .hamiltonian import SparseHamiltonian, assemble, dense_spectrum, dressed_energy, mixing_angle
from .lattice import GrinProfile, LatticeSpec, RegionMap, RegionParams, build_lattice, grin_detuning
from .optics import (
    MomentumDistribution,
    effective_reflection,
    lens_transmission,
    reflection,
    refraction_angle,
    relative_resolution,
    resolution,
    scatter,
    solve_k2x,
)
from .propagator import (
    WavePacketSpec,
    centroid_track,
    evolve,
    fit_rabi,
    gaussian_packet,
    region_population,
    well_eigenstate,
)

__version__ = "0.1.0"
