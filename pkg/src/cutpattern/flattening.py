"""Flattening of surface sheets into planar cutting sheets.

Three stages: an initial projection of the sheet onto a plane, removal of a
prescribed stress from every surface triangle to get unstressed edge lengths,
and a weighted least-squares fit of the planar node positions to those
lengths.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .equilibrium import SolverConfig, minimize
from .fem_core import local_coords, rotate_strain
from .mesh import PatternSheet, SurfaceMesh, scatter_rows, signed_areas_2d, sheet_topology

EDGES = ((0, 1), (1, 2), (2, 0))

logger = logging.getLogger(__name__)


class FlatteningError(ValueError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


@dataclass(frozen=True)
class ParallelProjection:
    """Orthogonal projection onto the plane through ``origin`` with ``normal``."""

    normal: tuple = (0.0, 0.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if np.linalg.norm(self.normal) == 0:
            raise ValueError("projection normal must be non-zero")


@dataclass(frozen=True)
class PointProjection:
    """Central projection from ``center`` onto a plane.

    ``center`` defaults to the centre of the least-squares sphere through the
    sheet nodes; the plane defaults to the one through the node centroid
    normal to the area-weighted mean element normal.
    """

    center: Optional[tuple] = None
    normal: Optional[tuple] = None
    origin: Optional[tuple] = None

    def __post_init__(self):
        if self.normal is not None and np.linalg.norm(self.normal) == 0:
            raise ValueError("projection normal must be non-zero")


ProjectionMode = Union[ParallelProjection, PointProjection]


def fit_sphere(points) -> tuple[np.ndarray, float]:
    """Algebraic least-squares sphere: returns (centre, radius)."""
    P = np.asarray(points, dtype=float)
    A = np.column_stack([2.0 * P, np.ones(len(P))])
    rhs = np.sum(P * P, axis=1)
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    c = sol[:3]
    return c, float(np.sqrt(sol[3] + c @ c))


def _plane_frame(normal):
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ex = np.array([1.0, 0.0, 0.0]) - n[0] * n
    if np.linalg.norm(ex) < 1e-8:
        ex = np.array([0.0, 1.0, 0.0]) - n[1] * n
    ex /= np.linalg.norm(ex)
    return n, ex, np.cross(n, ex)


def project_to_plane(surface: SurfaceMesh, sheet: int, mode: ProjectionMode) -> PatternSheet:
    nids, eids, local = sheet_topology(surface, sheet)
    P = surface.nodes[nids]
    if isinstance(mode, ParallelProjection):
        n, ex, ey = _plane_frame(mode.normal)
        q = P - np.asarray(mode.origin, dtype=float)
    elif isinstance(mode, PointProjection):
        if mode.normal is None:
            tri = P[local]
            an = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]).sum(axis=0)
            normal = an
        else:
            normal = mode.normal
        n, ex, ey = _plane_frame(normal)
        origin = P.mean(axis=0) if mode.origin is None else np.asarray(mode.origin, dtype=float)
        c = fit_sphere(P)[0] if mode.center is None else np.asarray(mode.center, dtype=float)
        denom = (P - c) @ n
        if np.any(np.abs(denom) < 1e-12) or not (np.all(denom > 0) or np.all(denom < 0)):
            raise FlatteningError("projection rays from the centre do not all cross the plane")
        t = ((origin - c) @ n) / denom
        q = c + t[:, None] * (P - c) - origin
    else:
        raise TypeError(f"unsupported projection mode {mode!r}")
    xy = np.column_stack([q @ ex, q @ ey])
    area = signed_areas_2d(xy, local)
    if (area <= 0).any():
        k = int(np.argmin(area))
        raise FlatteningError(f"element {eids[k]} collapses or reverses under projection", int(eids[k]))
    return PatternSheet(xy, local, nids, eids, sheet)


def strip_length(length, strain):
    """First-order unstressed length of a fibre carrying ``strain``."""
    return np.asarray(length) * (1.0 - np.asarray(strain))


def unstressed_edge_lengths(surface: SurfaceMesh, mat, sigma_hat, theta=None, nodes=None) -> np.ndarray:
    """Edge lengths (m, 3) after removing the reduction stress from each element.

    ``sigma_hat`` holds (sigma_1, sigma_2) per element in the material axes
    (shear is zero). Edges are ordered (n1-n2, n2-n3, n3-n1).
    """
    X = surface.nodes if nodes is None else np.asarray(nodes, dtype=float)
    el = surface.elements
    theta = surface.material_angle if theta is None else np.asarray(theta, dtype=float)
    sig = np.asarray(sigma_hat, dtype=float)
    sig = np.broadcast_to(sig, (len(el), sig.shape[-1]))
    sig3 = np.column_stack([sig[:, 0], sig[:, 1], np.zeros(len(el))])
    eps = rotate_strain(mat.strain_for_stress(sig3), -np.broadcast_to(theta, (len(el),)))
    a, b, h = local_coords(X[el[:, 0]], X[el[:, 1]], X[el[:, 2]])
    L = np.column_stack([a, np.hypot(b - a, h), np.hypot(b, h)])
    tx = np.column_stack([np.ones_like(a), (b - a) / L[:, 1], -b / L[:, 2]])
    ty = np.column_stack([np.zeros_like(a), h / L[:, 1], -h / L[:, 2]])
    eps_t = eps[:, [0]] * tx ** 2 + eps[:, [1]] * ty ** 2 + eps[:, [2]] * tx * ty
    L0 = strip_length(L, eps_t)
    Ls = np.sort(L0, axis=1)
    bad = (Ls[:, 0] <= 0) | (Ls[:, 0] + Ls[:, 1] <= Ls[:, 2])
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise FlatteningError(f"reduction stress too large: element {k} has no valid unstressed shape", k)
    return L0


def _edge_data(sheet_elements):
    i = np.concatenate([sheet_elements[:, a] for a, _ in EDGES])
    j = np.concatenate([sheet_elements[:, b] for _, b in EDGES])
    return i, j


def _lengths(xy, i, j):
    d = xy[j] - xy[i]
    return d, np.hypot(d[:, 0], d[:, 1])


def pattern_objective(xy, elements, L0):
    """F = sum kappa (L - L0)^2 with kappa = 1/L0, and its gradient (n, 2)."""
    i, j = _edge_data(elements)
    target = np.concatenate([L0[:, 0], L0[:, 1], L0[:, 2]])
    d, L = _lengths(xy, i, j)
    r = L - target
    F = float(np.sum(r * r / target))
    coef = (2.0 * r / (target * L))[:, None] * d
    grad = scatter_rows(np.concatenate([j, i]), np.concatenate([coef, -coef]), len(xy))
    return F, grad


def pattern_quality(sheet: PatternSheet, L0):
    """(F, worst relative edge-length mismatch) without optimising."""
    L0 = np.asarray(L0, dtype=float)
    F, _ = pattern_objective(sheet.nodes2d, sheet.elements, L0)
    i, j = _edge_data(sheet.elements)
    target = np.concatenate([L0[:, 0], L0[:, 1], L0[:, 2]])
    _, L = _lengths(sheet.nodes2d, i, j)
    return F, float(np.max(np.abs(L - target) / target))


def _gauge(sheet: PatternSheet) -> np.ndarray:
    """Fixed-coordinate mask removing the planar rigid-body modes.

    Node 0 is pinned; its lowest-numbered neighbour keeps the coordinate
    across the initial edge direction.
    """
    fixed = np.zeros(sheet.nodes2d.shape, dtype=bool)
    fixed[0] = True
    el = sheet.elements
    nbrs = el[(el == 0).any(axis=1)].ravel()
    k = int(nbrs[nbrs != 0].min())
    d = sheet.nodes2d[k] - sheet.nodes2d[0]
    fixed[k, 1 if abs(d[0]) >= abs(d[1]) else 0] = True
    return fixed


def fit_pattern(initial: PatternSheet, L0, cfg: Optional[SolverConfig] = None,
                grad_tol: float = 1e-8):
    """Planar node positions whose edge lengths best match ``L0``.

    Returns the fitted sheet and the final objective value. ``L0`` is indexed
    like ``initial.elements`` (one row per sheet element).
    """
    cfg = cfg or SolverConfig(step_init=1e-3)
    L0 = np.asarray(L0, dtype=float)
    if L0.shape != (len(initial.elements), 3) or (L0 <= 0).any():
        raise FlatteningError("L0 must hold three positive lengths per sheet element")
    fixed = _gauge(initial)
    free = ~fixed
    base = np.array(initial.nodes2d)

    def fun(x):
        xy = base.copy()
        xy[free] = x
        F, g = pattern_objective(xy, initial.elements, L0)
        return F, g[free]

    lower = initial.lower[free] if initial.lower is not None else None
    upper = initial.upper[free] if initial.upper is not None else None
    x, report = minimize(fun, base[free], cfg, grad_tol, lower, upper)
    if not report.converged:
        logger.warning("pattern fit for sheet %d stopped: %s (|g|=%.3e)",
                       initial.sheet, report.message, report.grad_norm)
    xy = base.copy()
    xy[free] = x
    area = signed_areas_2d(xy, initial.elements)
    if (area <= 0).any():
        k = int(np.argmin(area))
        eid = int(initial.element_ids[k])
        raise FlatteningError(f"pattern fit reversed element {eid}", eid)
    return initial.with_nodes(xy), report.final_energy
