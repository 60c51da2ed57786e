"""Constant-pressure loading of a membrane: enclosed volume, potential and nodal forces.

The volume is the divergence-theorem sum (1/3) sum_k A_k n_k . Xbar_k over the
membrane elements. For a membrane on a fixed frame the closure surface under
the frame is left out; that only adds a constant and does not change forces.

With W = p V, the force (p/3) sum_{k in fan(i)} A_k n_k on node i is the exact
derivative dW/dX_i whenever the element fan around node i is closed, which is
the case for every interior node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import SurfaceMesh, scatter_rows


@dataclass(frozen=True)
class PressureLoad:
    p: float  # kN/m^2

    def __post_init__(self):
        if not self.p >= 0:
            raise ValueError("pressure must be non-negative")


def _area_normals(X, elements):
    """A_k n_k, i.e. half the edge cross product, shape (m, 3)."""
    p = X[elements]
    return 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def enclosed_volume(surface: SurfaceMesh, nodes=None) -> float:
    X = surface.nodes if nodes is None else np.asarray(nodes, dtype=float)
    an = _area_normals(X, surface.elements)
    centroid = X[surface.elements].mean(axis=1)
    return float(np.sum(an * centroid)) / 3.0


def pressure_potential(surface: SurfaceMesh, load: PressureLoad, nodes=None) -> float:
    return load.p * enclosed_volume(surface, nodes)


def pressure_nodal_forces(surface: SurfaceMesh, load: PressureLoad, nodes=None) -> np.ndarray:
    """Consistent nodal forces for every node, shape (n, 3).

    Callers pick out the free coordinates; entries at supported coordinates
    are carried by the supports and do not enter the equilibrium equations.
    """
    X = surface.nodes if nodes is None else np.asarray(nodes, dtype=float)
    el = surface.elements
    contrib = (load.p / 3.0) * _area_normals(X, el)
    return scatter_rows(el.T.ravel(), np.tile(contrib, (3, 1)), len(X))
