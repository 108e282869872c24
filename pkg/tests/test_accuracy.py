import numpy as np
import pytest

from hocurve.accuracy import (accuracy_report, dinf_measure, normal_gradient_variation,
                              normal_gradient_z, sc_measure, wall_faces)
from hocurve.fixtures import box_mesh, bullet_fixture
from hocurve.geometry import GeometryModel, Plane, VirtualSurface
from hocurve.mesh import BoundaryClassification, HighOrderMesh
from hocurve.reference import lattice_points
from oracles import bullet_distance, triangle_gauss


@pytest.fixture(scope="module")
def linear_bullet():
    fx = bullet_fixture(0.7)
    return fx, HighOrderMesh.from_linear(fx.mesh, 1)


def _face_points(mesh, faces, xi):
    v = mesh.coords[mesh.faces[faces][:, :3]]
    lam = np.column_stack([1 - xi.sum(1), xi])
    return np.einsum("pk,fki->fpi", lam, v), 0.5 * np.linalg.norm(
        np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def test_linear_bullet_accuracy_matches_analytic_distances(linear_bullet):
    fx, m = linear_bullet
    rep = accuracy_report(m, fx.model, fx.classification)
    faces = np.concatenate(list(wall_faces(m, fx.model, fx.classification).values()))
    xi, w = triangle_gauss(12)
    pts, area = _face_points(m, faces, xi)
    d = bullet_distance(pts)
    wa = 2 * area[:, None] * w[None]
    A = wa.sum()
    assert rep.area == pytest.approx(A, rel=1e-12)
    assert rep.sc == pytest.approx((wa * d).sum() / A, rel=1e-6)
    assert rep.d2 == pytest.approx(np.sqrt((wa * d * d).sum() / A), rel=1e-6)
    # d_inf: the sampled maximum cannot exceed the true one and a fine lattice bounds it below
    dense, _ = _face_points(m, faces, lattice_points(2, 40))
    true_max = bullet_distance(dense).max()
    assert true_max * (1 - 2e-3) <= rep.dinf <= true_max * (1 + 1e-9)
    assert rep.dinf_rel == pytest.approx(rep.dinf / m.characteristic_length)
    assert bullet_distance(np.array(rep.dinf_location)) == pytest.approx(rep.dinf, rel=1e-9)
    assert sc_measure(m, fx.model, fx.classification) == rep.sc
    assert dinf_measure(m, fx.model, fx.classification)[0] == rep.dinf
    labels = [k for k, _ in rep.rows()]
    assert labels == ["SC", "SC/l_c", "d_2", "d_2/l_c", "d_inf", "d_inf/l_c"]


def test_flat_walls_are_exact():
    lin = box_mesh(2)
    m = HighOrderMesh.from_linear(lin, 2)
    planes = {k + 1: VirtualSurface(k + 1, [Plane(np.eye(3)[k // 2] * (k % 2), np.eye(3)[k // 2])])
              for k in range(6)}
    model = GeometryModel(planes, {}, {k + 1: k + 1 for k in range(6)})
    cls = BoundaryClassification([1, 2, 3], [], [4, 5, 6])
    rep = accuracy_report(m, model, cls)
    assert rep.sc < 1e-15 and rep.dinf < 1e-15
    assert rep.area == pytest.approx(3.0)
    assert set(rep.per_surface) == {1, 2, 3}


def test_normal_gradient_on_flat_and_cylindrical_faces(linear_bullet):
    fx, m = linear_bullet
    xi = lattice_points(2, 4)
    flat = np.flatnonzero(m.face_marks == 3)  # bottom disk
    assert np.abs(normal_gradient_z(m, flat, xi)).max() < 1e-8
    assert normal_gradient_variation(m, flat).max() < 1e-8
    # a quadratic face on the exact cylinder x^2 + y^2 = 1 has n_z = 0 identically
    m2 = HighOrderMesh.from_linear(fx.mesh, 2)
    side = np.flatnonzero(m2.face_marks == 2)
    c = m2.coords.copy()
    nodes = np.unique(m2.faces[side])
    r = np.hypot(c[nodes, 0], c[nodes, 1])
    c[nodes, :2] /= r[:, None]
    m2 = m2.with_coords(c)
    assert np.abs(normal_gradient_z(m2, side, xi)).max() < 1e-6


def test_sphere_normal_gradient_matches_closed_form():
    # faces point out of the domain, into the body: n = -x on the unit sphere,
    # so grad_s n_z . e_z = -(1 - z^2)
    fx = bullet_fixture(0.7)
    m = HighOrderMesh.from_linear(fx.mesh, 4)
    faces = np.flatnonzero(m.face_marks == 1)
    c = m.coords.copy()
    nodes = np.unique(m.faces[faces])
    c[nodes] /= np.linalg.norm(c[nodes], axis=1)[:, None]
    m = m.with_coords(c)
    xi = np.array([[1 / 3, 1 / 3]])
    g = normal_gradient_z(m, faces, xi)[:, 0]
    from hocurve.reference import build_reference
    vals, _ = build_reference(2, 4).eval(xi)
    pos = np.einsum("pa,fai->fi", vals, m.coords[m.faces[faces]])
    np.testing.assert_allclose(g, -(1 - pos[:, 2] ** 2), atol=1.5e-2)


@pytest.mark.parametrize("h", [1.0, 0.5])
def test_fixture_faces_point_out_of_the_domain(h):
    from hocurve.mesh import face_owners
    lin = bullet_fixture(h).mesh
    own = face_owners(lin.tets, lin.triangles)[:, 0]
    p = lin.vertices[lin.triangles]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inside = lin.vertices[lin.tets[own]].mean(axis=1) - p[:, 0]
    assert np.all(np.einsum("ij,ij->i", n, inside) < 0)
