import itertools
from math import comb

import numpy as np
import pytest

from hocurve.fixtures import box_mesh
from hocurve.mesh import (BoundaryClassification, HighOrderMesh, InvalidMeshError, LinearMesh,
                          element_jacobian, elevate_degree)


def _entity_counts(tets):
    edges = {tuple(sorted(e)) for t in tets.tolist() for e in itertools.combinations(t, 2)}
    faces = {tuple(sorted(f)) for t in tets.tolist() for f in itertools.combinations(t, 3)}
    return len(edges), len(faces)


@pytest.fixture(scope="module")
def box():
    return box_mesh(2)


def test_box_mesh_is_valid(box):
    box.validate()
    assert len(box.tets) == 48
    assert set(np.unique(box.marks)) == set(range(1, 7))


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_node_count_conforming(box, q):
    m = HighOrderMesh.from_linear(box, q)
    ne, nf = _entity_counts(box.tets)
    expected = len(box.vertices) + ne * (q - 1) + nf * comb(q - 1, 2) + len(box.tets) * comb(q - 1, 3)
    assert m.n_nodes == expected
    assert m.elements.shape == (48, comb(q + 3, 3))
    assert m.faces.shape == (len(box.triangles), comb(q + 2, 2))
    # nodes shared by neighbours coincide: no duplicated positions
    assert len(np.unique(np.round(m.coords, 12), axis=0)) == m.n_nodes


@pytest.mark.parametrize("q", [2, 3, 4])
def test_straight_map_is_identity(box, q):
    m = HighOrderMesh.from_linear(box, q)
    xi = np.array([[0.1, 0.2, 0.3], [0.25, 0.25, 0.25]])
    for e in (0, 17):
        np.testing.assert_allclose(element_jacobian(m, e, xi[0]), np.eye(3), atol=1e-12)
        v = box.vertices[box.tets[e]]
        lam = np.column_stack([1 - xi.sum(1), xi])
        np.testing.assert_allclose(m.map_points(e, xi)[0], lam @ v, atol=1e-13)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_elevation_preserves_the_map(box, q):
    m = HighOrderMesh.from_linear(box, q)
    rng = np.random.default_rng(q)
    m = m.with_coords(m.coords + 0.01 * rng.standard_normal(m.coords.shape))
    up = elevate_degree(m, q + 1)
    xi = rng.dirichlet(np.ones(4), 10)[:, 1:]
    np.testing.assert_allclose(up.map_points(np.arange(48), xi), m.map_points(np.arange(48), xi),
                               atol=1e-13)
    with pytest.raises(ValueError):
        elevate_degree(m, q + 2)


def test_face_nodes_belong_to_owner_element(box):
    m = HighOrderMesh.from_linear(box, 3)
    for f in range(0, len(m.faces), 7):
        owners = [e for e in range(m.n_elements) if set(m.faces[f]) <= set(m.elements[e])]
        assert len(owners) == 1


def test_characteristic_length(box):
    m = HighOrderMesh.from_linear(box, 2)
    assert m.characteristic_length == pytest.approx(np.sqrt(3.0))


def test_validation_errors(box):
    inverted = box.tets.copy()
    inverted[3, [0, 1]] = inverted[3, [1, 0]]
    with pytest.raises(InvalidMeshError, match="positively oriented"):
        LinearMesh(box.vertices, inverted, box.triangles, box.marks).validate()
    with pytest.raises(InvalidMeshError, match="missing vertex"):
        LinearMesh(box.vertices, box.tets + 100, box.triangles, box.marks).validate()
    with pytest.raises(InvalidMeshError, match="one mark"):
        LinearMesh(box.vertices, box.tets, box.triangles, box.marks[:-1]).validate()
    count = {}
    for t in box.tets.tolist():
        for f in itertools.combinations(sorted(t), 3):
            count[f] = count.get(f, 0) + 1
    shared = next(f for f, c in count.items() if c == 2)
    with pytest.raises(InvalidMeshError, match="shared by two"):
        LinearMesh(box.vertices, box.tets, [shared], [1]).validate()


def test_boundary_classification():
    c = BoundaryClassification([1, 2], [3], [4])
    assert c.role(2) == "wall" and c.role(3) == "symmetry" and c.role(4) == "farfield"
    with pytest.raises(KeyError):
        c.role(9)
    with pytest.raises(ValueError):
        c.check_covers([1, 9])
    with pytest.raises(ValueError):
        BoundaryClassification([1], [1], [])
