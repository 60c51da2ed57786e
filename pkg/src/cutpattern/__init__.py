"""Cutting-pattern optimisation for tensile and pneumatic membrane structures.

Membranes are modelled with corotational constant-strain triangles. A
cutting pattern is found by repeatedly flattening the surface with a
reduction stress removed, solving for the equilibrium shape of the resulting
sheets, and correcting the reduction stress toward a uniform target.
"""

from .equilibrium import SolverConfig, SolverReport, equilibrium_residual, minimize_energy
from .fem_core import ReferenceElements, recover_stresses, total_strain_energy
from .flattening import ParallelProjection, PointProjection, fit_pattern, project_to_plane
from .materials import EtfeBilinear, OrthotropicElastic, make_material
from .mesh import PatternSheet, SurfaceMesh, generate_hp_mesh, generate_square_cushion_mesh, load_mesh, load_pattern
from .pattern_loop import LoopConfig, TargetStress, run_pattern_optimization
from .pneumatics import PressureLoad, enclosed_volume

__version__ = "0.1.0"

__all__ = [
    "SolverConfig", "SolverReport", "equilibrium_residual", "minimize_energy",
    "ReferenceElements", "recover_stresses", "total_strain_energy",
    "ParallelProjection", "PointProjection", "fit_pattern", "project_to_plane",
    "EtfeBilinear", "OrthotropicElastic", "make_material",
    "PatternSheet", "SurfaceMesh", "generate_hp_mesh", "generate_square_cushion_mesh", "load_mesh", "load_pattern",
    "LoopConfig", "TargetStress", "run_pattern_optimization",
    "PressureLoad", "enclosed_volume",
]
