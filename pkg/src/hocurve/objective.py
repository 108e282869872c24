"""Penalty functional for mesh curving.

F_mu(x) = E(x) / |M_I| + mu * ||tr x - g||^2 / |dM_I|

where E is the squared distortion integrated over the initial mesh and ``g``
interpolates the frozen projection targets of the boundary nodes.  Active
degrees of freedom are stored dimension-major: all x coordinates of the
non-fixed nodes, then all y, then all z.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._kernels import BLOCKS, hessian_right_operands
from .distortion import INFINITE, DistortionTerms
from .geometry import FIXED, NodeTargets
from .mesh import HighOrderMesh
from .reference import QuadratureRule, build_reference, quadrature

log = logging.getLogger(__name__)


def solver_exactness(degree: int) -> int:
    """Default quadrature exactness of the distortion integrals."""
    return 2 * (3 * degree - 1)


def boundary_exactness(degree: int) -> int:
    return 2 * degree + 2


class MissingSnapshotError(RuntimeError):
    """A projected boundary node has no Dirichlet target."""


@dataclass
class ObjectiveEval:
    value: float
    energy: float
    boundary: float
    gradient: np.ndarray | None
    boundary_error: float


def face_mass_matrix(degree: int, rule: QuadratureRule | None = None) -> np.ndarray:
    """Mass matrix of the degree-q triangle basis on the reference triangle."""
    if rule is None:
        rule = quadrature(2, boundary_exactness(degree))
    vals, _ = build_reference(2, degree).eval(rule.points)
    return np.einsum("g,ga,gb->ab", rule.weights, vals, vals)


def boundary_mass_matrix(mesh: HighOrderMesh, rule: QuadratureRule | None = None):
    """Global mass matrix of the boundary trace on the initial boundary."""
    m = face_mass_matrix(mesh.degree, rule)
    scale = 2.0 * mesh.face_vertex_areas  # reference triangle area is 1/2
    nf, nb = mesh.faces.shape
    rows = np.repeat(mesh.faces, nb, axis=1).ravel()
    cols = np.tile(mesh.faces, (1, nb)).ravel()
    data = (scale[:, None, None] * m[None]).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


class PenaltyProblem:
    """State and derivatives of the penalty functional at fixed Dirichlet data."""

    def __init__(
        self,
        mesh: HighOrderMesh,
        targets: NodeTargets,
        mu: float = 1.0,
        rule: QuadratureRule | None = None,
        boundary_rule: QuadratureRule | None = None,
        delta: float = 0.0,
        chunk_points: int = 60000,
        hessian_mode: str = "auto",
        element_cache_bytes: float = 1.0e9,
    ):
        if mu <= 0:
            raise ValueError("penalty parameter must be positive")
        self.mesh = mesh
        self.targets = targets
        self.mu = float(mu)
        self.delta = float(delta)
        if hessian_mode not in ("auto", "element", "matrix-free"):
            raise ValueError(f"unknown hessian mode {hessian_mode!r}")
        self.hessian_mode = hessian_mode
        self.element_cache_bytes = element_cache_bytes
        self.rule = rule or quadrature(3, solver_exactness(mesh.degree))
        ref = build_reference(3, mesh.degree)
        _, dN = ref.eval(self.rule.points)  # (g, a, 3)
        self._dN = dN
        ng, na, _ = dN.shape
        self._dN2 = np.ascontiguousarray(dN.transpose(1, 0, 2).reshape(na, ng * 3))
        self._jinv = mesh.initial_inverses
        self._W = self.rule.weights[None, :] * mesh.initial_dets[:, None]
        self.volume = float(mesh.initial_dets.sum() / 6.0)
        self.area = float(mesh.face_vertex_areas.sum())
        if not (self.volume > 0 and self.area > 0):
            raise ValueError("initial mesh measures must be positive")
        self._mass = boundary_mass_matrix(mesh, boundary_rule)
        self._chunk = max(1, chunk_points // ng)

        n = mesh.n_nodes
        active = targets.kind != FIXED
        self.active_nodes = np.flatnonzero(active)
        self.n_active = len(self.active_nodes)
        self._node_to_active = np.full(n, -1, dtype=np.int64)
        self._node_to_active[self.active_nodes] = np.arange(self.n_active)
        ne = mesh.n_elements
        self._scatter = sp.csr_matrix(
            (np.ones(ne * na), (mesh.elements.ravel(), np.arange(ne * na))), shape=(n, ne * na)
        )
        self._mass_act = self._mass[self.active_nodes][:, self.active_nodes].tocsr()

        # Unknowns are displacements from the initial coordinates.  Near the
        # end of the penalty schedule the boundary term has a huge weight and
        # the resolution of absolute coordinates would floor the gradient.
        self.base = mesh.coords.copy()
        self.disp = np.zeros_like(self.base)
        self.snapshot: np.ndarray | None = None
        self._target = None
        self._cache = None
        self._elem_h = None

    # ------------------------------------------------------------------ state

    @property
    def coords(self) -> np.ndarray:
        return self.base + self.disp

    def x_from_coords(self, coords: np.ndarray) -> np.ndarray:
        return self._flat(coords - self.base)

    def _flat(self, disp: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(disp[self.active_nodes].T).ravel()

    @property
    def x(self) -> np.ndarray:
        return self._flat(self.disp)

    def _disp_from_x(self, x: np.ndarray) -> np.ndarray:
        d = self.disp.copy()
        d[self.active_nodes] = np.asarray(x).reshape(3, self.n_active).T
        return d

    def coords_from_x(self, x: np.ndarray) -> np.ndarray:
        return self.base + self._disp_from_x(x)

    def set_x(self, x: np.ndarray) -> None:
        self.disp = self._disp_from_x(x)
        self._cache = None
        self._elem_h = None

    def current_mesh(self) -> HighOrderMesh:
        return self.mesh.with_coords(self.coords)

    def set_snapshot(self, snapshot: np.ndarray) -> None:
        snapshot = np.asarray(snapshot, dtype=float)
        if snapshot.shape != self.coords.shape:
            raise MissingSnapshotError("snapshot must cover every node")
        bnd = self.mesh.boundary_nodes
        if not np.all(np.isfinite(snapshot[bnd])):
            raise MissingSnapshotError("snapshot is missing boundary targets")
        self.snapshot = snapshot
        self._target = snapshot - self.base

    # ------------------------------------------------------------- internals

    def _chunks(self):
        ne = self.mesh.n_elements
        for s in range(0, ne, self._chunk):
            yield slice(s, min(ne, s + self._chunk))

    def _jac(self, coords: np.ndarray, sl: slice) -> np.ndarray:
        """Jacobians relative to the initial elements, shape (e, g, 3, 3)."""
        X = coords[self.mesh.elements[sl]]  # (e, a, 3)
        e = X.shape[0]
        ng = self._dN.shape[0]
        A = (X.transpose(0, 2, 1).reshape(e * 3, -1) @ self._dN2).reshape(e, 3 * ng, 3)
        J = (A @ self._jinv[sl]).reshape(e, 3, ng, 3)
        return np.ascontiguousarray(J.transpose(0, 2, 1, 3))

    def _pullback(self, P: np.ndarray, sl: slice) -> np.ndarray:
        """Map per-point matrices dF/dJ (e, g, 3, 3) to nodal vectors (e, a, 3)."""
        e, ng = P.shape[:2]
        PW = (P * self._W[sl][..., None, None]).transpose(0, 2, 1, 3).reshape(e, 3 * ng, 3)
        R = PW @ self._jinv[sl].transpose(0, 2, 1)
        return (R.reshape(e * 3, ng * 3) @ self._dN2.T).reshape(e, 3, -1).transpose(0, 2, 1)

    def _assemble(self, local: np.ndarray) -> np.ndarray:
        return self._scatter @ local.reshape(-1, 3)

    def _deviation(self, disp: np.ndarray) -> np.ndarray:
        if self.snapshot is None:
            raise MissingSnapshotError("Dirichlet snapshot not built")
        d = np.zeros_like(disp)
        b = self.mesh.boundary_nodes
        d[b] = disp[b] - self._target[b]
        return d

    # ------------------------------------------------------------ evaluation

    def energy(self, coords: np.ndarray | None = None) -> float:
        """Integral of eta^2 over the initial mesh (unnormalized)."""
        coords = self.coords if coords is None else coords
        total = 0.0
        for sl in self._chunks():
            t = DistortionTerms.build(self._jac(coords, sl), self.delta, derivatives=0)
            if t is None:
                return INFINITE
            total += float(np.sum(self._W[sl] * t.f))
        return total

    def boundary_deviation(self, coords: np.ndarray | None = None) -> float:
        disp = self.disp if coords is None else coords - self.base
        d = self._deviation(disp)
        return float(np.einsum("ni,ni->", d, self._mass @ d))

    def boundary_error(self, coords: np.ndarray | None = None) -> float:
        """||tr x - g|| / ||1|| on the initial boundary (length units)."""
        return float(np.sqrt(max(self.boundary_deviation(coords), 0.0) / self.area))

    def evaluate(self, x: np.ndarray | None = None, gradient: bool = True) -> ObjectiveEval:
        disp = self.disp if x is None else self._disp_from_x(x)
        coords = self.base + disp
        dev = self._deviation(disp)
        mdev = self._mass @ dev
        bterm = float(np.einsum("ni,ni->", dev, mdev))
        berr = float(np.sqrt(max(bterm, 0.0) / self.area))
        energy = 0.0
        local = [] if gradient else None
        for sl in self._chunks():
            t = DistortionTerms.build(self._jac(coords, sl), self.delta, 1 if gradient else 0)
            if t is None:
                return ObjectiveEval(INFINITE, INFINITE, bterm, None, berr)
            energy += float(np.sum(self._W[sl] * t.f))
            if gradient:
                local.append(self._pullback(t.first(), sl))
        value = energy / self.volume + self.mu * bterm / self.area
        grad = None
        if gradient:
            g = self._assemble(np.concatenate(local)) / self.volume
            g += (2.0 * self.mu / self.area) * mdev
            grad = self._flat(g)
        return ObjectiveEval(value, energy, bterm, grad, berr)

    def value(self, x: np.ndarray | None = None) -> float:
        return self.evaluate(x, gradient=False).value

    def gradient(self, x: np.ndarray | None = None) -> np.ndarray:
        ev = self.evaluate(x, gradient=True)
        if ev.gradient is None:
            raise FloatingPointError("gradient undefined: inverted quadrature point")
        return ev.gradient

    # --------------------------------------------------------- second order

    def _terms(self):
        if self._cache is None:
            terms = []
            for sl in self._chunks():
                t = DistortionTerms.build(self._jac(self.coords, sl), self.delta)
                if t is None:
                    raise FloatingPointError("Hessian undefined: inverted quadrature point")
                terms.append((sl, t))
            self._cache = terms
        return self._cache

    def _element_hessians_chunk(self, sl: slice, t: DistortionTerms) -> np.ndarray:
        """Element Hessians of the weighted energy, shape (e, 3, na, 3, na).

        Block (i, k) is sum_g dN_g D~ dN_g^T with D~ the per-point second
        derivative pulled back to reference coordinates, so the reference
        gradients form a left factor shared by every element and the
        contraction runs as one matrix product per group of elements.
        """
        ng, na, _ = self._dN.shape
        W = self._W[sl]
        jinv = self._jinv[sl]
        JI = self.mesh.initial_jacobians[sl]
        e = len(jinv)
        s = t.s
        jt = jinv.transpose(0, 2, 1)[:, None]
        Jh, Ch = t.J @ jt, t.C @ jt
        coef = (W * 8.0 * t.phi, W * 4.0 * s * t.dphi, W * s * s * t.d2phi,
                W * 4.0 * s * t.phi, W * s * s * t.dphi)
        H = np.empty((e, 3, na, 3, na))
        step = max(1, int(4.0e6 // (3 * ng * 6 * na * 8)))
        R = np.empty((3 * ng, min(step, e) * 6 * na))
        for s0 in range(0, e, step):
            s1 = min(e, s0 + step)
            n = s1 - s0
            Rv = R[:, :n * 6 * na]
            hessian_right_operands(Jh[s0:s1], Ch[s0:s1], t.J[s0:s1],
                                   *(c[s0:s1] for c in coef), jinv[s0:s1], JI[s0:s1],
                                   self._dN, Rv)
            B = (self._dN2 @ Rv).reshape(na, n, 6, na).transpose(1, 2, 0, 3)
            for blk, (i, k) in enumerate(BLOCKS):
                H[s0:s1, i, :, k, :] = B[:, blk]
                if i != k:
                    H[s0:s1, k, :, i, :] = B[:, blk].transpose(0, 2, 1)
        return H

    def element_hessians(self) -> np.ndarray:
        """Cached energy Hessians per element, shape (ne, 3 na, 3 na), dimension-major."""
        if self._elem_h is None:
            na = self.mesh.elements.shape[1]
            H = np.empty((self.mesh.n_elements, 3 * na, 3 * na))
            for sl, t in self._terms():
                H[sl] = self._element_hessians_chunk(sl, t).reshape(-1, 3 * na, 3 * na)
            self._elem_h = H
        return self._elem_h

    def _use_element_matrices(self) -> bool:
        if self.hessian_mode == "element":
            return True
        if self.hessian_mode == "matrix-free":
            return False
        na = self.mesh.elements.shape[1]
        return self.mesh.n_elements * (3 * na) ** 2 * 8 <= self.element_cache_bytes

    def hessian_vector_product(self, v: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        """Exact Hessian of F_mu at ``x`` (default: current state) applied to ``v``.

        No global matrix is formed: the product is accumulated element by
        element, either from cached element Hessians or point by point.
        """
        if x is not None:
            self.set_x(x)
        V = np.zeros_like(self.coords)
        va = np.asarray(v).reshape(3, self.n_active)
        V[self.active_nodes] = va.T
        if self._use_element_matrices():
            H = self.element_hessians()
            ve = V[self.mesh.elements].transpose(0, 2, 1).reshape(len(H), -1)
            loc = np.einsum("eij,ej->ei", H, ve).reshape(len(H), 3, -1).transpose(0, 2, 1)
            out = self._assemble(loc)
        else:
            local = []
            for sl, t in self._terms():
                HJ = self._jac(V, sl)
                local.append(self._pullback(t.second_dir(HJ), sl))
            out = self._assemble(np.concatenate(local))
        hv = self._flat(out / self.volume)
        hv += (2.0 * self.mu / self.area) * (self._mass_act @ va.T).T.ravel()
        return hv

    def _element_pairs(self):
        el = self.mesh.elements
        na = el.shape[1]
        rows = np.repeat(el, na, axis=1).ravel()
        cols = np.tile(el, (1, na)).ravel()
        return rows, cols

    def _restrict(self, rows, cols, data):
        r = self._node_to_active[rows]
        c = self._node_to_active[cols]
        keep = (r >= 0) & (c >= 0)
        n = self.n_active
        return sp.csr_matrix((data[keep], (r[keep], c[keep])), shape=(n, n))

    def _block_data(self, pairs) -> list[np.ndarray]:
        """Element-wise data of the dimension blocks (i, k) in ``pairs``."""
        na = self.mesh.elements.shape[1]
        if self._use_element_matrices():
            H = self.element_hessians()
            return [H[:, i * na:(i + 1) * na, k * na:(k + 1) * na].ravel() for i, k in pairs]
        out = [np.empty((self.mesh.n_elements, na, na)) for _ in pairs]
        for sl, t in self._terms():
            H = self._element_hessians_chunk(sl, t)
            for o, (i, k) in zip(out, pairs):
                o[sl] = H[:, i, :, k, :]
        return [o.ravel() for o in out]

    def diagonal_blocks(self, x: np.ndarray | None = None) -> list[sp.csr_matrix]:
        """Per-dimension diagonal blocks H_xx, H_yy, H_zz over active nodes."""
        if x is not None:
            self.set_x(x)
        rows, cols = self._element_pairs()
        pen = (2.0 * self.mu / self.area) * self._mass_act
        data = self._block_data([(i, i) for i in range(3)])
        return [(self._restrict(rows, cols, d) / self.volume + pen).tocsr() for d in data]

    def full_hessian(self, x: np.ndarray | None = None) -> sp.csr_matrix:
        """Assembled sparse Hessian over active dofs (dimension-major ordering)."""
        if x is not None:
            self.set_x(x)
        rows, cols = self._element_pairs()
        pen = (2.0 * self.mu / self.area) * self._mass_act
        pairs = [(i, k) for i in range(3) for k in range(3)]
        data = iter(self._block_data(pairs))
        parts = [[self._restrict(rows, cols, next(data)) / self.volume
                  for k in range(3)] for i in range(3)]
        for i in range(3):
            parts[i][i] = parts[i][i] + pen
        return sp.bmat(parts, format="csr")
