import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hocurve.distortion import (DistortionTerms, cofactor, det3, element_qualities,
                                element_scaled_jacobian, pointwise_eta, quality_rule,
                                regularized_det)
from hocurve.fixtures import box_mesh, bullet_fixture
from hocurve.mesh import HighOrderMesh
from oracles import eta_closed_form


def _random_jacobians(n, seed=0):
    rng = np.random.default_rng(seed)
    J = np.eye(3) + 0.3 * rng.standard_normal((n, 3, 3))
    return J[np.linalg.det(J) > 0.2]


def test_eta_identities():
    assert pointwise_eta(np.eye(3)) == pytest.approx(1.0, abs=1e-12)
    R = Rotation.random(20, random_state=1).as_matrix()
    for s, r in zip(np.linspace(0.1, 10, 20), R):
        assert pointwise_eta(s * r) == pytest.approx(1.0, abs=1e-12)
    assert pointwise_eta(np.diag([2.0, 1.0, 1.0])) == pytest.approx(2 ** (1 / 3), abs=1e-12)
    assert pointwise_eta(np.diag([-1.0, 1.0, 1.0])) == math.inf
    assert pointwise_eta(np.diag([0.0, 1.0, 1.0])) == math.inf


def test_eta_matches_definition():
    J = _random_jacobians(50)
    np.testing.assert_allclose(pointwise_eta(J), [eta_closed_form(j) for j in J], rtol=1e-13)
    assert np.all(pointwise_eta(J) >= 1 - 1e-14)


def test_regularized_det():
    d = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(regularized_det(d), [0.0, 0.0, 2.0])
    r = regularized_det(d, 0.1)
    assert np.all(r > 0) and r[2] == pytest.approx(2.0, rel=1e-2)


def test_cofactor_is_det_gradient():
    J = _random_jacobians(10)
    C = cofactor(J)
    np.testing.assert_allclose(C, det3(J)[:, None, None] * np.linalg.inv(J).transpose(0, 2, 1),
                               rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("delta", [0.0, 0.05])
def test_distortion_derivatives_against_differences(delta):
    J = _random_jacobians(8, seed=2)
    t = DistortionTerms.build(J, delta)
    G = t.first()
    h = 1e-6
    rng = np.random.default_rng(3)
    H = rng.standard_normal(J.shape)
    fp = DistortionTerms.build(J + h * H, delta, 1)
    fm = DistortionTerms.build(J - h * H, delta, 1)
    np.testing.assert_allclose(np.einsum("nij,nij->n", G, H), (fp.f - fm.f) / (2 * h),
                               rtol=1e-7)
    np.testing.assert_allclose(t.second_dir(H), (fp.first() - fm.first()) / (2 * h),
                               rtol=1e-6, atol=1e-8)
    full = t.second_full()
    np.testing.assert_allclose(np.einsum("nijkl,nkl->nij", full, H), t.second_dir(H),
                               rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(full, full.transpose(0, 3, 4, 1, 2), atol=1e-12)


def test_terms_refuse_inverted_points():
    J = np.stack([np.eye(3), np.diag([-1.0, 1, 1])])
    assert DistortionTerms.build(J) is None


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_straight_elements_have_unit_quality(q):
    for lin in (box_mesh(2), bullet_fixture(1.0).mesh):
        m = HighOrderMesh.from_linear(lin, q)
        for eq in element_qualities(m, level=4):
            assert eq.shape_quality == pytest.approx(1.0, abs=1e-12)
            assert eq.scaled_jacobian == pytest.approx(1.0, abs=1e-12)
            assert eq.valid


def test_curved_element_quality_drops_and_inversion_is_flagged():
    m = HighOrderMesh.from_linear(box_mesh(1), 2)
    e = 0
    # move one edge node of element 0 along a fixed direction
    node = m.elements[e, 4]
    c = m.coords.copy()
    c[node] += [0.05, 0.05, 0.05]
    q = element_qualities(m.with_coords(c), elements=np.array([e]), level=4)[0]
    assert 0 < q.shape_quality < 1 and 0 < q.scaled_jacobian < 1
    c[node] += [2.0, 2.0, 2.0]
    bad = element_qualities(m.with_coords(c), elements=np.array([e]), level=4)[0]
    assert bad.shape_quality == 0.0 and bad.scaled_jacobian <= 0 and not bad.valid
    assert element_scaled_jacobian(m.with_coords(c), e) <= 0


def test_quality_rule_exactness():
    m = HighOrderMesh.from_linear(box_mesh(1), 3)
    assert quality_rule(m).degree == 2 * (3 * 3 - 1) + 4
    assert quality_rule(m, extra=0, base=10).degree == 10
