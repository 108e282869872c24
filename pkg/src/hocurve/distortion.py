"""Point-wise distortion and element quality measures."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import HighOrderMesh
from .reference import QuadratureRule, build_reference, lattice_points, quadrature

# Sentinel for an infinite distortion.  Python's inf already orders above every
# finite float; we never let it enter a sum, callers short-circuit instead.
INFINITE = math.inf

DIM = 3


def det0(d):
    """Rectified determinant 1/2 (d + |d|)."""
    return 0.5 * (d + np.abs(d))


def regularized_det(d, delta: float = 0.0):
    """1/2 (d + sqrt(d^2 + 4 delta^2)); equals det0 for delta = 0."""
    if delta == 0.0:
        return det0(d)
    return 0.5 * (d + np.sqrt(d * d + 4.0 * delta * delta))


def cofactor(J: np.ndarray) -> np.ndarray:
    """Cofactor matrices (d det / d J) of a batch of 3x3 matrices."""
    C = np.empty_like(J)
    C[..., 0, 0] = J[..., 1, 1] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 1]
    C[..., 0, 1] = J[..., 1, 2] * J[..., 2, 0] - J[..., 1, 0] * J[..., 2, 2]
    C[..., 0, 2] = J[..., 1, 0] * J[..., 2, 1] - J[..., 1, 1] * J[..., 2, 0]
    C[..., 1, 0] = J[..., 0, 2] * J[..., 2, 1] - J[..., 0, 1] * J[..., 2, 2]
    C[..., 1, 1] = J[..., 0, 0] * J[..., 2, 2] - J[..., 0, 2] * J[..., 2, 0]
    C[..., 1, 2] = J[..., 0, 1] * J[..., 2, 0] - J[..., 0, 0] * J[..., 2, 1]
    C[..., 2, 0] = J[..., 0, 1] * J[..., 1, 2] - J[..., 0, 2] * J[..., 1, 1]
    C[..., 2, 1] = J[..., 0, 2] * J[..., 1, 0] - J[..., 0, 0] * J[..., 1, 2]
    C[..., 2, 2] = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    return C


def det3(J: np.ndarray) -> np.ndarray:
    return (
        J[..., 0, 0] * (J[..., 1, 1] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 1])
        - J[..., 0, 1] * (J[..., 1, 0] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 0])
        + J[..., 0, 2] * (J[..., 1, 0] * J[..., 2, 1] - J[..., 1, 1] * J[..., 2, 0])
    )


def pointwise_eta(J, delta: float = 0.0):
    """eta(J) = ||J||_F^2 / (3 det0(J)^(2/3)).

    Scalar input returns a float (``INFINITE`` when the regularized
    determinant vanishes); batched input (..., 3, 3) returns an array.
    """
    J = np.asarray(J, dtype=float)
    s = np.einsum("...ij,...ij->...", J, J)
    h = regularized_det(det3(J), delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(h > 0, s / (DIM * np.cbrt(h) ** 2), INFINITE)
    if eta.ndim == 0:
        return float(eta)
    return eta


@dataclass
class DistortionTerms:
    """Per-point quantities for f = eta^2 = s^2 * phi(d), s = ||J||^2.

    Everything needed for values, first and second derivatives of ``f`` with
    respect to J.  Only built when every regularized determinant is positive.
    """

    J: np.ndarray
    C: np.ndarray
    s: np.ndarray
    f: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray

    @classmethod
    def build(cls, J: np.ndarray, delta: float = 0.0, derivatives: int = 2):
        d = det3(J)
        h = regularized_det(d, delta)
        if np.any(h <= 0):
            return None
        s = np.einsum("...ij,...ij->...", J, J)
        hm = np.cbrt(h) ** -4 / 9.0  # h^(-4/3) / 9
        f = s * s * hm
        if derivatives == 0:
            return cls(J, None, s, f, hm, None, None)
        if delta == 0.0:
            dh, d2h = 1.0, 0.0
        else:
            r = np.sqrt(d * d + 4.0 * delta * delta)
            dh = 0.5 * (1.0 + d / r)
            d2h = 2.0 * delta * delta / r**3
        dphi = -(4.0 / 3.0) * hm / h * dh
        d2phi = (28.0 / 9.0) * hm / (h * h) * dh * dh - (4.0 / 3.0) * hm / h * d2h
        return cls(J, cofactor(J), s, f, hm, dphi, d2phi)

    def first(self) -> np.ndarray:
        """d f / d J, shape (..., 3, 3)."""
        s = self.s[..., None, None]
        return 4.0 * s * self.phi[..., None, None] * self.J + (s * s) * self.dphi[
            ..., None, None
        ] * self.C

    def second_dir(self, H: np.ndarray) -> np.ndarray:
        """Second derivative of f applied to the direction H, shape (..., 3, 3)."""
        J, C = self.J, self.C
        s = self.s
        jh = np.einsum("...ij,...ij->...", J, H)
        ch = np.einsum("...ij,...ij->...", C, H)
        # d cof(J)[H] = cof(J + H) - cof(J) - cof(H)
        dC = cofactor(J + H) - C - cofactor(H)
        e = lambda a: a[..., None, None]  # noqa: E731
        return (
            e(8.0 * self.phi * jh) * J
            + e(4.0 * s * self.dphi) * (e(ch) * J + e(jh) * C)
            + e(4.0 * s * self.phi) * H
            + e(s * s * self.d2phi * ch) * C
            + e(s * s * self.dphi) * dC
        )

    def second_full(self) -> np.ndarray:
        """Full 9x9 second derivative, shape (..., 3, 3, 3, 3) as [i,j,k,l]."""
        J, C, s = self.J, self.C, self.s
        eye = np.eye(3)
        I4 = np.einsum("ik,jl->ijkl", eye, eye)
        e = lambda a: a[..., None, None, None, None]  # noqa: E731
        outer = lambda A, B: np.einsum("...ij,...kl->...ijkl", A, B)  # noqa: E731
        # d^2 det / dJ_ij dJ_kl = eps_ikm eps_jln J_mn
        eps = np.zeros((3, 3, 3))
        eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
        eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
        hdet = np.einsum("ikm,jln,...mn->...ijkl", eps, eps, J)
        return (
            e(8.0 * self.phi) * outer(J, J)
            + e(4.0 * s * self.dphi) * (outer(J, C) + outer(C, J))
            + e(4.0 * s * self.phi) * I4
            + e(s * s * self.d2phi) * outer(C, C)
            + e(s * s * self.dphi) * hdet
        )


# --------------------------------------------------------------------------
# element measures


@dataclass(frozen=True)
class ElementQuality:
    element: int
    eta_element: float
    shape_quality: float
    scaled_jacobian: float
    min_det: float
    max_det: float

    @property
    def valid(self) -> bool:
        return self.scaled_jacobian > 0


def _jacobians(mesh: HighOrderMesh, elements: np.ndarray, xi: np.ndarray) -> np.ndarray:
    ref = build_reference(3, mesh.degree)
    _, dN = ref.eval(xi)  # (g, a, 3)
    X = mesh.coords[mesh.elements[elements]]  # (e, a, 3)
    A = np.einsum("eai,gaj->egij", X, dN)
    return A @ mesh.initial_inverses[elements][:, None]


def quality_rule(mesh: HighOrderMesh, extra: int = 4, base: int | None = None) -> QuadratureRule:
    """Quality quadrature: solver exactness (default 2(3q-1)) raised by ``extra``."""
    if base is None:
        base = 2 * (3 * mesh.degree - 1)
    return quadrature(3, base + extra)


def scaled_jacobian_samples(mesh: HighOrderMesh, rule: QuadratureRule, level: int = 16):
    """Sample set for inf/sup of det: quadrature points, nodes, level lattice."""
    ref = build_reference(3, mesh.degree)
    return np.vstack([rule.points, ref.ref_nodes, lattice_points(3, level)])


def element_shape_quality(
    mesh: HighOrderMesh, element: int, rule: QuadratureRule | None = None, delta: float = 0.0
) -> ElementQuality:
    return element_qualities(mesh, rule, delta=delta, elements=np.array([element]))[0]


def element_scaled_jacobian(mesh: HighOrderMesh, element: int, sample_set=None) -> float:
    if sample_set is None:
        sample_set = scaled_jacobian_samples(mesh, quality_rule(mesh))
    det = det3(_jacobians(mesh, np.array([element]), np.asarray(sample_set)))[0]
    return _scaled(det.min(), det.max())


def _scaled(lo: float, hi: float) -> float:
    if hi <= 0:
        # every sample inverted: report as nonpositive, not as a ratio of negatives
        return float(min(lo, 0.0) / abs(hi)) if hi < 0 else float(min(lo, 0.0))
    return float(lo / hi)


def element_qualities(
    mesh: HighOrderMesh,
    rule: QuadratureRule | None = None,
    delta: float = 0.0,
    elements: np.ndarray | None = None,
    level: int = 16,
    chunk: int = 256,
) -> list[ElementQuality]:
    """Shape quality and scaled Jacobian of every (or the given) element."""
    if rule is None:
        rule = quality_rule(mesh)
    if elements is None:
        elements = np.arange(mesh.n_elements)
    samples = scaled_jacobian_samples(mesh, rule, level)
    nq = len(rule)
    w = rule.weights / rule.weights.sum()
    out = []
    for start in range(0, len(elements), chunk):
        ids = elements[start:start + chunk]
        J = _jacobians(mesh, ids, samples)
        det = det3(J)
        eta = pointwise_eta(J[:, :nq], delta)
        for k, e in enumerate(ids):
            row = eta[k]
            if np.all(np.isfinite(row)):
                eta_e = float(np.sqrt(np.dot(w, row * row)))
                qs = 1.0 / eta_e
            else:
                eta_e, qs = INFINITE, 0.0
            lo, hi = float(det[k].min()), float(det[k].max())
            out.append(ElementQuality(int(e), eta_e, qs, _scaled(lo, hi), lo, hi))
    return out
