import numpy as np
import pytest
from hypothesis import given, strategies as st

from _support import flat_grid, tetrahedron
from cutpattern.mesh import SurfaceMesh, generate_square_cushion_mesh
from cutpattern.pneumatics import PressureLoad, enclosed_volume, pressure_nodal_forces, pressure_potential

seeds = st.integers(0, 2 ** 32 - 1)


def octahedron(scale=1.0):
    nodes = scale * np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    el = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return SurfaceMesh(nodes, el, False, np.zeros(8, int), np.zeros(8))


def fd_volume_gradient(mesh, X, h=1e-5):
    g = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(3):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            g[i, j] = (enclosed_volume(mesh, Xp) - enclosed_volume(mesh, Xm)) / (2 * h)
    return g


def test_tetrahedron_volume():
    assert abs(enclosed_volume(tetrahedron()) - 1.0 / 6.0) < 1e-14
    assert octahedron().normals()[0] @ [1, 1, 1] > 0  # outward winding
    assert enclosed_volume(octahedron()) == pytest.approx(4.0 / 3.0, rel=1e-14)


def test_flat_mesh_has_zero_volume():
    assert enclosed_volume(flat_grid(4)) == 0.0


def test_single_triangle_summand():
    nodes = np.array([[0, 0, 2.5], [2, 0, 2.5], [0, 3, 2.5]], float)
    m = SurfaceMesh(nodes, [[0, 1, 2]], False, [0], [0.0])
    assert enclosed_volume(m) == pytest.approx(3.0 * 2.5 / 3.0, rel=1e-15)


def test_pressure_potential_examples():
    assert pressure_potential(tetrahedron(), PressureLoad(0.0)) == 0.0
    assert pressure_potential(tetrahedron(), PressureLoad(6.0)) == pytest.approx(1.0, rel=1e-14)
    m = generate_square_cushion_mesh(4.0, 0.3, 6)
    w = pressure_potential(m, PressureLoad(1.3))
    assert pressure_potential(m, PressureLoad(1.3), 2.0 * m.nodes) == pytest.approx(8.0 * w, rel=1e-13)


def test_negative_pressure_rejected():
    with pytest.raises(ValueError):
        PressureLoad(-1.0)


def test_flat_square_resultant():
    m = flat_grid(5, size=2.0)
    f = pressure_nodal_forces(m, PressureLoad(1.0))
    np.testing.assert_allclose(f.sum(axis=0), [0.0, 0.0, 4.0], atol=1e-14)


def test_single_triangle_nodal_forces():
    nodes = np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0]], float)
    m = SurfaceMesh(nodes, [[0, 1, 2]], False, [0], [0.0])
    f = pressure_nodal_forces(m, PressureLoad(3.0))
    np.testing.assert_allclose(f, np.tile([0, 0, 3.0 * 1.0 / 3.0], (3, 1)), atol=1e-15)


@given(seeds)
def test_closed_mesh_forces_are_exact_volume_gradient(seed):
    rng = np.random.default_rng(seed)
    m = octahedron()
    X = m.nodes + 0.1 * rng.standard_normal(m.nodes.shape)
    p = 2.5
    f = pressure_nodal_forces(m, PressureLoad(p), X)
    fd = p * fd_volume_gradient(m, X)
    err = np.linalg.norm(f - fd, axis=1) / np.linalg.norm(f, axis=1)
    assert err.max() < 1e-8


@given(seeds)
def test_closed_mesh_self_equilibrium(seed):
    rng = np.random.default_rng(seed)
    m = octahedron()
    X = m.nodes + 0.1 * rng.standard_normal(m.nodes.shape)
    f = pressure_nodal_forces(m, PressureLoad(1.0), X)
    assert np.abs(f.sum(axis=0)).max() <= 1e-10 * np.abs(f).max()


@given(seeds)
def test_closed_mesh_potential_translation_invariant(seed):
    rng = np.random.default_rng(seed)
    m = octahedron()
    X = m.nodes + 0.1 * rng.standard_normal(m.nodes.shape)
    w = pressure_potential(m, PressureLoad(1.0), X)
    assert pressure_potential(m, PressureLoad(1.0), X + rng.standard_normal(3)) == pytest.approx(w, rel=1e-10)


def test_open_cushion_interior_forces_are_exact():
    rng = np.random.default_rng(7)
    m = generate_square_cushion_mesh(4.0, 0.3, 6)
    X = m.nodes + 0.05 * rng.standard_normal(m.nodes.shape) * ~m.fixed
    f = pressure_nodal_forces(m, PressureLoad(1.0), X)
    fd = fd_volume_gradient(m, X)
    interior = ~m.fixed.all(axis=1)
    err = np.linalg.norm(f - fd, axis=1)[interior] / np.linalg.norm(f, axis=1)[interior]
    assert err.max() < 1e-8
