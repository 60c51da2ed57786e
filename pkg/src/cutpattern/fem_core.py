"""Corotational constant-strain triangles.

Each element measures its strain in a local frame with node 1 at the origin
and node 2 on the +x axis, so rigid-body motion drops out by construction.
The unstressed (reference) shape is stored as the local coordinates (a, b, h)
of nodes 2 and 3; strains are the small-strain CST values of the relative
displacements (u2, u3, v3) and are rotated into the material axes by the
per-element material angle.

Everything is vectorised over elements; per-element contributions are
accumulated with ``np.bincount`` in element order, so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import AREA_TOL, DegenerateElementError, PatternSheet, SurfaceMesh, scatter_rows


@dataclass(frozen=True, eq=False)
class ReferenceElements:
    """Unstressed local geometry per element: node 2 at (a, 0), node 3 at (b, h)."""

    a: np.ndarray
    b: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        a, b, h = (np.asarray(v, dtype=float).reshape(-1) for v in (self.a, self.b, self.h))
        if not (a.shape == b.shape == h.shape):
            raise ValueError("a, b and h must have the same length")
        if (a <= 0).any() or (h <= 0).any():
            raise ValueError("reference elements need a > 0 and h > 0")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "h", h)

    def __len__(self):
        return len(self.a)

    @property
    def area(self) -> np.ndarray:
        return 0.5 * self.a * self.h

    @classmethod
    def from_coords(cls, coords, elements) -> "ReferenceElements":
        p = np.asarray(coords, dtype=float)
        if p.shape[1] == 2:
            p = np.column_stack([p, np.zeros(len(p))])
        el = np.asarray(elements)
        a, b, h = local_coords(p[el[:, 0]], p[el[:, 1]], p[el[:, 2]])
        return cls(a, b, h)


def local_coords(p1, p2, p3):
    """Local (a, b, h) of a triangle; works on single points or (m, 3) stacks."""
    p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p1, p2, p3))
    e1 = p2 - p1
    e2 = p3 - p1
    a = np.linalg.norm(e1, axis=-1)
    cross = np.linalg.norm(np.cross(e1, e2), axis=-1)
    if np.any(0.5 * cross <= AREA_TOL):
        bad = int(np.argmin(np.atleast_1d(cross)))
        raise DegenerateElementError(bad, 0.5 * float(np.atleast_1d(cross)[bad]))
    b = np.sum(e1 * e2, axis=-1) / a
    h = cross / a
    return a, b, h


def _local_coords_with_grad(p1, p2, p3):
    """(a, b, h) plus their derivatives w.r.t. the two edge vectors.

    Returns arrays d*_de1, d*_de2 of shape (m, 3); derivatives w.r.t. node 1
    are minus their sum.
    """
    e1 = p2 - p1
    e2 = p3 - p1
    a = np.linalg.norm(e1, axis=1)
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n, axis=1)
    if np.any(0.5 * nn <= AREA_TOL):
        bad = int(np.argmin(nn))
        raise DegenerateElementError(bad, 0.5 * float(nn[bad]))
    n_hat = n / nn[:, None]
    dot = np.sum(e1 * e2, axis=1)
    b = dot / a
    h = nn / a
    a_ = a[:, None]
    da_de1 = e1 / a_
    db_de1 = e2 / a_ - (dot / a ** 3)[:, None] * e1
    db_de2 = e1 / a_
    dh_de1 = np.cross(e2, n_hat) / a_ - (nn / a ** 3)[:, None] * e1
    dh_de2 = np.cross(n_hat, e1) / a_
    return (a, b, h), (da_de1, db_de1, db_de2, dh_de1, dh_de2)


def strain_displacement_matrix(a, b, h) -> np.ndarray:
    """C mapping (u2, u3, v3) to local (eps_x, eps_y, gamma)."""
    return np.array([[1.0 / a, 0.0, 0.0],
                     [0.0, 0.0, 1.0 / h],
                     [-b / (a * h), 1.0 / h, 0.0]])


def relative_displacements(ref: ReferenceElements, p1, p2, p3) -> np.ndarray:
    a, b, h = local_coords(p1, p2, p3)
    return np.stack([a - ref.a, b - ref.b, h - ref.h], axis=-1)


def strain_rotation_matrix(theta) -> np.ndarray:
    """Engineering-strain transformation into axes rotated by ``theta``.

    Shape (3, 3) for scalar theta or (m, 3, 3) for an array.
    """
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    R = np.array([[c * c, s * s, s * c],
                  [s * s, c * c, -s * c],
                  [-2 * s * c, 2 * s * c, c * c - s * s]])
    return np.moveaxis(R, (0, 1), (-2, -1)) if th.ndim else R


def rotate_strain(eps_local, theta) -> np.ndarray:
    R = strain_rotation_matrix(theta)
    return np.einsum("...ij,...j->...i", R, np.asarray(eps_local, dtype=float))


def rotate_stress(sigma, theta) -> np.ndarray:
    """Stress-component transformation (shear not doubled) into axes rotated by ``theta``."""
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    T = np.array([[c * c, s * s, 2 * s * c],
                  [s * s, c * c, -2 * s * c],
                  [-s * c, s * c, c * c - s * s]])
    T = np.moveaxis(T, (0, 1), (-2, -1)) if th.ndim else T
    return np.einsum("...ij,...j->...i", T, np.asarray(sigma, dtype=float))


def _local_strain(ref, a, b, h):
    u2, u3, v3 = a - ref.a, b - ref.b, h - ref.h
    return np.column_stack([u2 / ref.a, v3 / ref.h, (u3 - u2 * ref.b / ref.a) / ref.h])


def element_strain(ref: ReferenceElements, p1, p2, p3, theta) -> np.ndarray:
    """Strain in material axes for a stack of elements (or a single element)."""
    single = np.ndim(p1) == 1
    p1, p2, p3 = (np.atleast_2d(np.asarray(p, dtype=float)) for p in (p1, p2, p3))
    a, b, h = local_coords(p1, p2, p3)
    eps = rotate_strain(_local_strain(ref, a, b, h), np.broadcast_to(theta, a.shape))
    return eps[0] if single else eps


def element_strains(surface: SurfaceMesh, refs: ReferenceElements, nodes=None) -> np.ndarray:
    X = surface.nodes if nodes is None else nodes
    el = surface.elements
    return element_strain(refs, X[el[:, 0]], X[el[:, 1]], X[el[:, 2]], surface.material_angle)


def total_strain_energy(surface: SurfaceMesh, refs: ReferenceElements, mat, nodes=None) -> float:
    eps = element_strains(surface, refs, nodes)
    return float(np.sum(refs.area * mat.energy_density(eps)))


def energy_and_gradient(surface: SurfaceMesh, refs: ReferenceElements, mat, nodes=None):
    """Strain energy and its gradient w.r.t. every nodal coordinate, shape (n, 3)."""
    X = surface.nodes if nodes is None else np.asarray(nodes, dtype=float)
    el = surface.elements
    p1, p2, p3 = X[el[:, 0]], X[el[:, 1]], X[el[:, 2]]
    (a, b, h), (da1, db1, db2, dh1, dh2) = _local_coords_with_grad(p1, p2, p3)
    theta = surface.material_angle
    R = strain_rotation_matrix(theta)
    eps = np.einsum("mij,mj->mi", R, _local_strain(refs, a, b, h))
    A0 = refs.area
    energy = float(np.sum(A0 * mat.energy_density(eps)))
    sig = mat.energy_gradient(eps)
    # dE/d(eps_local) then d(eps_local)/d(a, b, h)
    g_loc = A0[:, None] * np.einsum("mij,mi->mj", R, sig)
    ga = g_loc[:, 0] / refs.a - g_loc[:, 2] * refs.b / (refs.a * refs.h)
    gb = g_loc[:, 2] / refs.h
    gh = g_loc[:, 1] / refs.h
    g_e1 = ga[:, None] * da1 + gb[:, None] * db1 + gh[:, None] * dh1
    g_e2 = gb[:, None] * db2 + gh[:, None] * dh2
    idx = np.concatenate([el[:, 0], el[:, 1], el[:, 2]])
    grad = scatter_rows(idx, np.concatenate([-(g_e1 + g_e2), g_e1, g_e2]), len(X))
    return energy, grad


def strain_energy_gradient(surface: SurfaceMesh, refs: ReferenceElements, mat, nodes=None) -> np.ndarray:
    """Gradient of the strain energy over the free coordinates (flattened)."""
    _, g = energy_and_gradient(surface, refs, mat, nodes)
    return g[~surface.fixed]


def recover_stresses(surface: SurfaceMesh, refs: ReferenceElements, mat, nodes=None) -> np.ndarray:
    """Per-element stress (kN/m) in the material axes."""
    return mat.stress(element_strains(surface, refs, nodes))


def reference_from_patterns(patterns, n_elements: int):
    """Reference elements and material angles from the cutting sheets.

    The warp direction is taken along the sheet's global X axis; the angle is
    measured from each element's local x-axis (edge node1 -> node2) to it.
    """
    a = np.full(n_elements, np.nan)
    b = np.full(n_elements, np.nan)
    h = np.full(n_elements, np.nan)
    theta = np.full(n_elements, np.nan)
    for sheet in patterns:
        ref = ReferenceElements.from_coords(sheet.nodes2d, sheet.elements)
        eids = sheet.element_ids
        a[eids], b[eids], h[eids] = ref.a, ref.b, ref.h
        theta[eids] = material_angles(sheet)
    if np.isnan(a).any():
        missing = int(np.flatnonzero(np.isnan(a))[0])
        raise ValueError(f"element {missing} is not covered by any pattern sheet")
    return ReferenceElements(a, b, h), theta


def material_angles(sheet: PatternSheet) -> np.ndarray:
    p = sheet.nodes2d[sheet.elements]
    d = p[:, 1] - p[:, 0]
    return -np.arctan2(d[:, 1], d[:, 0])
