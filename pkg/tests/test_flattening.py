import numpy as np
import pytest
from hypothesis import given, strategies as st

from _support import flat_grid
from cutpattern.equilibrium import check_gradient
from cutpattern.flattening import (FlatteningError, ParallelProjection, PointProjection, fit_pattern, fit_sphere,
                                   pattern_objective, pattern_quality, project_to_plane, strip_length,
                                   unstressed_edge_lengths)
from cutpattern.materials import ETFE_MODEL2, EtfeBilinear
from cutpattern.mesh import PatternSheet, SurfaceMesh, _grid_elements, generate_hp_mesh, signed_areas_2d

seeds = st.integers(0, 2 ** 32 - 1)


def grid_surface(d, mapping):
    """Grid on [-1, 1]^2 lifted by ``mapping(x, y) -> (X, Y, Z)``."""
    s = np.linspace(-1.0, 1.0, d + 1)
    x, y = np.meshgrid(s, s)
    X = np.column_stack(mapping(x.ravel(), y.ravel()))
    el, _ = _grid_elements(d)
    return SurfaceMesh(X, el, False, np.zeros(len(el), int), np.zeros(len(el)))


def spherical_cap(R=5.0, d=6):
    return grid_surface(d, lambda x, y: (x, y, np.sqrt(R * R - x * x - y * y)))


def cylinder(R=2.0, d=6):
    # generators along y; each grid cell is a planar rectangle, so the polyhedron is developable
    return grid_surface(d, lambda x, y: (R * np.sin(x / R), y, R * np.cos(x / R)))


def edge_lengths(X, el):
    return np.column_stack([np.linalg.norm(X[el[:, j]] - X[el[:, i]], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))])


def test_planar_sheet_projects_isometrically():
    m = flat_grid(4, size=2.0)
    pat = project_to_plane(m, 0, ParallelProjection())
    np.testing.assert_allclose(edge_lengths(pat.nodes2d, pat.elements), edge_lengths(m.nodes, m.elements),
                               rtol=1e-14)


def test_hp_parallel_projection_keeps_plan_coordinates():
    m = generate_hp_mesh(10.0, 5)
    pat = project_to_plane(m, 1, ParallelProjection((0.0, 0.0, 1.0)))
    np.testing.assert_allclose(pat.nodes2d, m.nodes[pat.node_ids, :2], atol=1e-14)
    assert (signed_areas_2d(pat.nodes2d, pat.elements) > 0).all()


def test_point_projection_of_cap_from_its_centre():
    R = 5.0
    m = spherical_cap(R)
    pat = project_to_plane(m, 0, PointProjection(center=(0, 0, 0), normal=(0, 0, 1), origin=(0, 0, R)))
    X = m.nodes[pat.node_ids]
    tan_phi = np.hypot(X[:, 0], X[:, 1]) / X[:, 2]
    np.testing.assert_allclose(np.hypot(*pat.nodes2d.T), R * tan_phi, atol=1e-13)
    assert (signed_areas_2d(pat.nodes2d, pat.elements) > 0).all()


def test_default_point_projection_uses_fitted_sphere():
    m = spherical_cap(5.0)
    c, r = fit_sphere(m.nodes)
    np.testing.assert_allclose(c, 0.0, atol=1e-10)
    assert r == pytest.approx(5.0, rel=1e-12)
    pat = project_to_plane(m, 0, PointProjection())
    assert (signed_areas_2d(pat.nodes2d, pat.elements) > 0).all()


def test_edge_on_projection_is_rejected():
    with pytest.raises(FlatteningError):
        project_to_plane(flat_grid(3), 0, ParallelProjection((1.0, 0.0, 0.0)))


def test_strip_length_examples():
    assert strip_length(1.0, 0.1) == pytest.approx(0.9)
    assert strip_length(2.0, 0.0) == 2.0


def test_zero_reduction_stress_keeps_lengths(pvc):
    m = generate_hp_mesh(10.0, 4)
    L0 = unstressed_edge_lengths(m, pvc, np.zeros(2))
    np.testing.assert_allclose(L0, edge_lengths(m.nodes, m.elements), rtol=1e-15)


@given(seeds, st.floats(0.1, 3.0))
def test_isotropic_equibiaxial_shrink(seed, s):
    etfe = EtfeBilinear(**ETFE_MODEL2)
    rng = np.random.default_rng(seed)
    m = flat_grid(3).with_material_angle(rng.uniform(-np.pi, np.pi, 18))
    L0 = unstressed_edge_lengths(m, etfe, np.array([s, s]))
    factor = 1.0 - (1.0 - etfe.nu) * s / etfe.E
    np.testing.assert_allclose(L0, factor * edge_lengths(m.nodes, m.elements), rtol=1e-12)


def test_orthotropic_edge_strains(pvc):
    nodes = np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0]], float)
    m = SurfaceMesh(nodes, [[0, 1, 2]], False, [0], [0.0])
    sig = np.array([3.0, 1.0])
    eps = pvc.strain_for_stress(np.array([[3.0, 1.0, 0.0]]))[0]
    L0 = unstressed_edge_lengths(m, pvc, sig)[0]
    assert L0[0] == pytest.approx(2.0 * (1 - eps[0]), rel=1e-14)
    assert L0[2] == pytest.approx(1.0 * (1 - eps[1]), rel=1e-14)
    t = np.array([-2.0, 1.0]) / np.sqrt(5.0)
    e_t = eps[0] * t[0] ** 2 + eps[1] * t[1] ** 2 + eps[2] * t[0] * t[1]
    assert L0[1] == pytest.approx(np.sqrt(5.0) * (1 - e_t), rel=1e-14)


def test_yielded_etfe_uses_inverse_law(etfe):
    m = flat_grid(2)
    e12 = m.nodes[m.elements[:, 1]] - m.nodes[m.elements[:, 0]]
    m = m.with_material_angle(-np.arctan2(e12[:, 1], e12[:, 0]))
    sig = np.array([5.0, 4.0])  # beyond the yield stress
    eps = etfe.strain_for_stress(np.array([[5.0, 4.0, 0.0]]))
    np.testing.assert_allclose(etfe.stress(eps), [[5.0, 4.0, 0.0]], atol=1e-12)
    assert eps[0, 0] > (5.0 - etfe.nu * 4.0) / etfe.E  # softer than the elastic branch
    L0 = unstressed_edge_lengths(m, etfe, sig)
    L = edge_lengths(m.nodes, m.elements)
    horizontal = np.isclose(e12[:, 1], 0.0)
    np.testing.assert_allclose(L0[horizontal, 0], L[horizontal, 0] * (1 - eps[0, 0]), rtol=1e-13)


def test_too_large_reduction_stress_is_rejected(pvc):
    with pytest.raises(FlatteningError, match="too large"):
        unstressed_edge_lengths(flat_grid(2), pvc, np.array([2000.0, 2000.0]))


def test_objective_weight_oracle():
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    el = np.array([[0, 1, 2]])
    L = np.array([[1.0, np.sqrt(2.0), 1.0]])
    assert pattern_objective(xy, el, L)[0] == 0.0
    half = L.copy()
    half[0, 0] = 0.5
    # kappa = 1 / L0 = 2, residual 0.5
    assert pattern_objective(xy, el, half)[0] == pytest.approx(2.0 * 0.25, rel=1e-15)


@given(seeds)
def test_objective_gradient(seed):
    rng = np.random.default_rng(seed)
    m = flat_grid(3)
    pat = project_to_plane(m, 0, ParallelProjection())
    L0 = edge_lengths(m.nodes, m.elements) * rng.uniform(0.9, 1.1, (len(m.elements), 3))
    xy0 = pat.nodes2d + 0.02 * rng.standard_normal(pat.nodes2d.shape)

    def fun(x):
        F, g = pattern_objective(x.reshape(-1, 2), pat.elements, L0)
        return F, g.ravel()

    assert check_gradient(fun, xy0.ravel(), 1e-7).max_error < 1e-6


def test_pattern_quality_examples():
    m = flat_grid(3)
    pat = project_to_plane(m, 0, ParallelProjection())
    L = edge_lengths(m.nodes, m.elements)
    F, worst = pattern_quality(pat, L)
    assert F < 1e-28 and worst < 1e-14
    F, worst = pattern_quality(pat.with_nodes(1.01 * pat.nodes2d), L)
    assert worst == pytest.approx(0.01, rel=1e-10)
    assert F == pytest.approx(1e-4 * L.sum(), rel=1e-10)


def test_developable_surface_fits_exactly():
    m = cylinder()
    pat = project_to_plane(m, 0, ParallelProjection())
    L0 = edge_lengths(m.nodes, m.elements)
    fitted, F = fit_pattern(pat, L0)
    assert F < 1e-12 * L0.sum()
    # congruent with the exact development: all pairwise distances agree
    s = np.linspace(-1.0, 1.0, 7)
    chord = 2.0 * 2.0 * np.sin((s[1] - s[0]) / 4.0)  # R = 2, angle step (s1 - s0) / R
    x, y = np.meshgrid(chord * np.arange(7), s)
    dev = np.column_stack([x.ravel(), y.ravel()])[fitted.node_ids]
    P = fitted.nodes2d
    dP = np.linalg.norm(P[:, None] - P[None], axis=2)
    dD = np.linalg.norm(dev[:, None] - dev[None], axis=2)
    assert np.abs(dP - dD).max() < 1e-6


def test_three_four_five_triangle():
    pat = PatternSheet([[0.0, 0.0], [1.0, 0.2], [0.3, 0.8]], [[0, 1, 2]], [0, 1, 2], [0])
    fitted, F = fit_pattern(pat, np.array([[3.0, 4.0, 5.0]]))
    assert F < 1e-14
    np.testing.assert_allclose(edge_lengths(fitted.nodes2d, fitted.elements), [[3.0, 4.0, 5.0]], rtol=1e-7)
    np.testing.assert_array_equal(fitted.nodes2d[0], [0.0, 0.0])


def test_doubly_curved_surface_leaves_residual():
    m = spherical_cap(2.0)
    pat = project_to_plane(m, 0, PointProjection())
    L0 = edge_lengths(m.nodes, m.elements)
    _, F = fit_pattern(pat, L0)
    assert F > 1e-8


@given(seeds)
def test_fit_invariant_under_rigid_motion_of_guess(seed):
    rng = np.random.default_rng(seed)
    m = spherical_cap(3.0, 4)
    pat = project_to_plane(m, 0, PointProjection())
    L0 = edge_lengths(m.nodes, m.elements)
    _, F = fit_pattern(pat, L0)
    a = rng.uniform(-np.pi, np.pi)
    Q = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    moved = pat.with_nodes(pat.nodes2d @ Q.T + rng.standard_normal(2))
    _, F2 = fit_pattern(moved, L0)
    assert F2 == pytest.approx(F, rel=1e-9)


def test_fit_keeps_triangles_positive_and_gauge():
    m = spherical_cap(2.0)
    pat = project_to_plane(m, 0, PointProjection())
    L0 = 0.97 * edge_lengths(m.nodes, m.elements)
    fitted, _ = fit_pattern(pat, L0)
    assert (signed_areas_2d(fitted.nodes2d, fitted.elements) > 0).all()
    np.testing.assert_array_equal(fitted.nodes2d[0], pat.nodes2d[0])


def test_fit_rejects_bad_lengths():
    pat = PatternSheet([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]], [0, 1, 2], [0])
    with pytest.raises(FlatteningError):
        fit_pattern(pat, np.array([[1.0, -1.0, 1.0]]))
    with pytest.raises(FlatteningError):
        fit_pattern(pat, np.ones((2, 3)))


def test_developable_pipeline_is_isometric(pvc):
    m = cylinder()
    pat = project_to_plane(m, 0, ParallelProjection())
    L0 = unstressed_edge_lengths(m, pvc, np.zeros(2))
    # a zero-residual fit can be driven far below the default tolerance
    fitted, _ = fit_pattern(pat, L0, grad_tol=1e-12)
    L = edge_lengths(m.nodes, m.elements)
    assert np.abs(edge_lengths(fitted.nodes2d, fitted.elements) / L - 1.0).max() < 1e-9


def test_refit_from_converged_pattern_is_stationary():
    m = spherical_cap(2.0)
    pat = project_to_plane(m, 0, PointProjection())
    L0 = 0.98 * edge_lengths(m.nodes, m.elements)
    fitted, F = fit_pattern(pat, L0)
    again, F2 = fit_pattern(fitted, L0)
    assert F2 <= F
    np.testing.assert_allclose(again.nodes2d, fitted.nodes2d, atol=1e-7)
