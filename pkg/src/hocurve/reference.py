"""Reference simplex machinery: equispaced Lagrange bases and quadrature rules.

Reference coordinates ``xi`` live on the unit simplex with vertex 0 at the
origin and vertex ``k`` at the ``k``-th unit vector, so the barycentric
coordinates are ``(1 - sum(xi), xi_1, ..., xi_d)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 4


class UnsupportedDegreeError(ValueError):
    """Raised for polynomial degrees outside the supported range."""


def _check_degree(degree: int) -> None:
    if not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegreeError(
            f"degree {degree} not supported (1 <= degree <= {MAX_DEGREE})"
        )


def lattice_indices(dimension: int, degree: int) -> np.ndarray:
    """Multi-indices ``alpha`` (length dim+1, sum == degree) in node order.

    Vertices come first, then edge, face and interior nodes.  Entities are
    visited in lexicographic order of their local vertex tuples and nodes
    inside an entity in descending lexicographic order of ``alpha``.
    """
    alphas = [
        a for a in itertools.product(range(degree + 1), repeat=dimension + 1)
        if sum(a) == degree
    ]

    def key(a):
        support = tuple(k for k, v in enumerate(a) if v > 0)
        return (len(support), support, tuple(-v for v in a))

    return np.array(sorted(alphas, key=key), dtype=np.int64)


@dataclass(frozen=True)
class ReferenceSimplex:
    dimension: int
    degree: int
    alphas: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.alphas)

    @property
    def nodes(self) -> np.ndarray:
        """Barycentric node coordinates, shape (n_nodes, dim+1)."""
        return self.alphas / self.degree

    @property
    def ref_nodes(self) -> np.ndarray:
        """Node coordinates in reference (Cartesian) coordinates."""
        return self.nodes[:, 1:]

    def entity_of(self, i: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.alphas[i]))

    def eval(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """Basis values and reference gradients at points ``xi``.

        ``xi`` has shape (..., dim) in reference coordinates.  Returns values
        of shape (..., n_nodes) and gradients of shape (..., n_nodes, dim).
        """
        xi = np.asarray(xi, dtype=float)
        lam = np.concatenate([1.0 - xi.sum(axis=-1, keepdims=True), xi], axis=-1)
        vals, dlam = _silvester(lam, self.alphas, self.degree)
        # d lambda_0 / d xi_j = -1, d lambda_k / d xi_j = delta_kj
        grads = dlam[..., 1:] - dlam[..., :1]
        return vals, grads


def _silvester(lam: np.ndarray, alphas: np.ndarray, q: int):
    """Silvester's product form of equispaced Lagrange polynomials.

    Returns values (..., n) and derivatives with respect to each barycentric
    coordinate (..., n, d+1).
    """
    nb = alphas.shape[1]
    # univariate factors P_m(t) = prod_{l<m} (q t - l) / (l + 1), m = 0..q
    fac = np.ones(lam.shape[:-1] + (q + 1, nb))
    dfac = np.zeros_like(fac)
    for m in range(1, q + 1):
        r = (q * lam - (m - 1)) / m
        fac[..., m, :] = fac[..., m - 1, :] * r
        dfac[..., m, :] = dfac[..., m - 1, :] * r + fac[..., m - 1, :] * (q / m)
    cols = np.arange(nb)
    per = fac[..., alphas, cols]  # (..., n, nb)
    dper = dfac[..., alphas, cols]
    vals = np.prod(per, axis=-1)
    dvals = np.empty(per.shape)
    for k in range(nb):
        others = np.delete(per, k, axis=-1)
        dvals[..., k] = dper[..., k] * np.prod(others, axis=-1)
    return vals, dvals


@lru_cache(maxsize=None)
def build_reference(dimension: int, degree: int) -> ReferenceSimplex:
    if dimension not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dimension}")
    _check_degree(degree)
    alphas = lattice_indices(dimension, degree)
    alphas.setflags(write=False)
    assert len(alphas) == comb(degree + dimension, dimension)
    return ReferenceSimplex(dimension, degree, alphas)


def eval_basis(ref: ReferenceSimplex, point) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the basis at one barycentric point (length dim+1)."""
    point = np.asarray(point, dtype=float)
    return ref.eval(point[1:])


def lattice_points(dimension: int, n: int) -> np.ndarray:
    """Reference coordinates of the level-``n`` equispaced lattice (any n >= 1)."""
    return lattice_indices(dimension, n)[:, 1:] / n


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    dimension: int
    degree: int
    points: np.ndarray  # reference coordinates (n, dim)
    weights: np.ndarray  # sum to 1/dim!

    @property
    def barycentric(self) -> np.ndarray:
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])

    def __len__(self) -> int:
        return len(self.weights)


def conical_product_rule(dimension: int, degree: int) -> QuadratureRule:
    """Collapsed-coordinate Gauss-Jacobi product rule, exact to ``degree``."""
    n = max(1, (degree + 2) // 2)
    if dimension == 2:
        x0, w0 = roots_jacobi(n, 0.0, 0.0)
        x1, w1 = roots_jacobi(n, 1.0, 0.0)
        a, b = (x0 + 1) / 2, (x1 + 1) / 2
        wa, wb = w0 / 2, w1 / 4
        # t1 = 1 - b carries weight (1 - t)^1 after the collapse
        A, B = np.meshgrid(a, b, indexing="ij")
        WA, WB = np.meshgrid(wa, wb, indexing="ij")
        s = 1 - B
        pts = np.column_stack([(s * A).ravel(), B.ravel()])
        w = (WA * WB).ravel()
    elif dimension == 3:
        x0, w0 = roots_jacobi(n, 0.0, 0.0)
        x1, w1 = roots_jacobi(n, 1.0, 0.0)
        x2, w2 = roots_jacobi(n, 2.0, 0.0)
        a, b, c = (x0 + 1) / 2, (x1 + 1) / 2, (x2 + 1) / 2
        wa, wb, wc = w0 / 2, w1 / 4, w2 / 8
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        WA, WB, WC = np.meshgrid(wa, wb, wc, indexing="ij")
        z = C
        y = (1 - C) * B
        x = (1 - C) * (1 - B) * A
        pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
        w = (WA * WB * WC).ravel()
    else:
        raise ValueError(f"dimension must be 2 or 3, got {dimension}")
    return QuadratureRule(dimension, degree, pts, w)


_TABLE_MAX = {2: 30, 3: 15}


def _table_rule(dimension: int, degree: int) -> QuadratureRule | None:
    try:
        import basix
    except ImportError:  # pragma: no cover - basix is a declared dependency
        return None
    if degree > _TABLE_MAX[dimension]:
        return None
    cell = basix.CellType.triangle if dimension == 2 else basix.CellType.tetrahedron
    pts, w = basix.make_quadrature(
        cell, degree, rule=basix.QuadratureType.xiao_gimbutas
    )
    if np.any(w <= 0):
        return None
    return QuadratureRule(dimension, degree, np.ascontiguousarray(pts), w.copy())


@lru_cache(maxsize=None)
def quadrature(dimension: int, exactness_degree: int) -> QuadratureRule:
    """Positive-weight rule on the reference simplex exact to ``exactness_degree``.

    Uses Xiao-Gimbutas tables where they exist with positive weights and
    falls back to the conical product rule otherwise.
    """
    if exactness_degree < 1:
        raise ValueError("exactness_degree must be >= 1")
    if exactness_degree == 1:
        w = np.array([1.0 / factorial(dimension)])
        return QuadratureRule(dimension, 1, np.full((1, dimension), 1.0 / (dimension + 1)), w)
    rule = _table_rule(dimension, exactness_degree)
    if rule is None:
        rule = conical_product_rule(dimension, exactness_degree)
    rule.points.setflags(write=False)
    rule.weights.setflags(write=False)
    return rule


def monomial_integral(exponents) -> float:
    """Exact integral of prod x_k^{e_k} over the reference simplex."""
    exponents = list(exponents)
    num = 1
    for e in exponents:
        num *= factorial(e)
    return num / factorial(sum(exponents) + len(exponents))
