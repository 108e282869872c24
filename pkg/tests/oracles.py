"""Independent reference computations used by the tests.

Nothing here calls the projection, derivative or ordering code under test:
closest points come from dense parameter sampling refined by a bounded
optimizer, derivatives from central differences, node orderings from
tables frozen out of the gmsh library.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

# Node positions (times the degree) of gmsh's high-order simplices, in file order.
GMSH_TABLES = {
    11: [[0, 0, 0], [2, 0, 0], [0, 2, 0], [0, 0, 2], [1, 0, 0], [1, 1, 0], [0, 1, 0],
         [0, 0, 1], [0, 1, 1], [1, 0, 1]],
    29: [[0, 0, 0], [3, 0, 0], [0, 3, 0], [0, 0, 3], [1, 0, 0], [2, 0, 0], [2, 1, 0],
         [1, 2, 0], [0, 2, 0], [0, 1, 0], [0, 0, 2], [0, 0, 1], [0, 1, 2], [0, 2, 1],
         [1, 0, 2], [2, 0, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]],
    30: [[0, 0, 0], [4, 0, 0], [0, 4, 0], [0, 0, 4], [1, 0, 0], [2, 0, 0], [3, 0, 0],
         [3, 1, 0], [2, 2, 0], [1, 3, 0], [0, 3, 0], [0, 2, 0], [0, 1, 0], [0, 0, 3],
         [0, 0, 2], [0, 0, 1], [0, 1, 3], [0, 2, 2], [0, 3, 1], [1, 0, 3], [2, 0, 2],
         [3, 0, 1], [1, 1, 0], [1, 2, 0], [2, 1, 0], [1, 0, 1], [2, 0, 1], [1, 0, 2],
         [0, 1, 1], [0, 1, 2], [0, 2, 1], [1, 1, 2], [2, 1, 1], [1, 2, 1], [1, 1, 1]],
    9: [[0, 0], [2, 0], [0, 2], [1, 0], [1, 1], [0, 1]],
    21: [[0, 0], [3, 0], [0, 3], [1, 0], [2, 0], [2, 1], [1, 2], [0, 2], [0, 1], [1, 1]],
    23: [[0, 0], [4, 0], [0, 4], [1, 0], [2, 0], [3, 0], [3, 1], [2, 2], [1, 3], [0, 3],
         [0, 2], [0, 1], [1, 1], [2, 1], [1, 2]],
}
GMSH_DEGREE = {11: (3, 2), 29: (3, 3), 30: (3, 4), 9: (2, 2), 21: (2, 3), 23: (2, 4)}


# --------------------------------------------------------------------------
# closest points


class SampledPatch:
    """Dense samples of a patch over a parameter box, plus a local refiner.

    ``param`` maps (u, v) arrays to points; for disks pass a polar map and
    ``polar=True`` so that no samples sit on the degenerate centre, where the
    refiner would have no angular gradient.
    """

    def __init__(self, param, box, n: int = 160, polar: bool = False):
        self.param = param
        self.box = box
        u0, u1, v0, v1 = box
        us = np.linspace(u0 + (u1 - u0) / (2 * n), u1, n) if polar else np.linspace(u0, u1, n)
        U, V = np.meshgrid(us, np.linspace(v0, v1, n), indexing="ij")
        self.uv = np.column_stack([U.ravel(), V.ravel()])
        self.points = np.asarray(param(self.uv[:, 0], self.uv[:, 1]))
        self.tree = cKDTree(self.points)

    def closest(self, p: np.ndarray, k: int = 1) -> np.ndarray:
        _, idx = self.tree.query(p, k=k)
        u0, u1, v0, v1 = self.box
        best, best_d = None, math.inf
        for i in np.atleast_1d(idx):
            def f(uv):
                d = np.asarray(self.param(np.array(uv[0]), np.array(uv[1]))) - p
                # parameter derivatives by central differences of the map
                du = (np.asarray(self.param(np.array(uv[0] + 1e-6), np.array(uv[1])))
                      - np.asarray(self.param(np.array(uv[0] - 1e-6), np.array(uv[1])))) / 2e-6
                dv = (np.asarray(self.param(np.array(uv[0]), np.array(uv[1] + 1e-6)))
                      - np.asarray(self.param(np.array(uv[0]), np.array(uv[1] - 1e-6)))) / 2e-6
                return float(d @ d), 2 * np.array([d @ du, d @ dv])
            r = minimize(f, self.uv[i], jac=True, method="L-BFGS-B", bounds=[(u0, u1), (v0, v1)],
                         options={"ftol": 1e-30, "gtol": 1e-14, "maxiter": 500})
            if r.fun < best_d:
                best, best_d = r.x, r.fun
        return np.asarray(self.param(np.array(best[0]), np.array(best[1])))


def disk_param(plane):
    r = plane.radius

    def param(rho, theta):
        return plane.evaluate(rho * np.cos(theta), rho * np.sin(theta))
    return param, (0.0, r, 0.0, 2 * math.pi)


def sampled_patch(patch, n: int = 160) -> SampledPatch:
    if getattr(patch, "kind", "") == "plane" and patch.radius is not None:
        param, box = disk_param(patch)
        return SampledPatch(param, box, n, polar=True)
    return SampledPatch(patch.evaluate, patch.bounds, n)


class SurfaceOracle:
    """Closest point on a union of patches by dense sampling and refinement."""

    def __init__(self, patches, n: int = 160):
        self.samplers = [sampled_patch(p, n) for p in patches]

    def project(self, points: np.ndarray) -> np.ndarray:
        out = np.empty_like(points)
        for j, p in enumerate(points):
            # only refine patches whose samples come close to the best one
            d = np.array([s.tree.query(p)[0] for s in self.samplers])
            cands = np.flatnonzero(d <= d.min() + 0.05)
            best, best_d = None, math.inf
            for c in cands:
                q = self.samplers[c].closest(p)
                dq = np.linalg.norm(q - p)
                if dq < best_d:
                    best, best_d = q, dq
            out[j] = best
        return out


def curve_oracle(left: SurfaceOracle, right: SurfaceOracle, points: np.ndarray):
    """Averaged composed projections, built from oracle surface projections."""
    a = left.project(points)
    b = right.project(points)
    return 0.5 * (left.project(b) + right.project(a))


# --------------------------------------------------------------------------
# finite differences


def central_gradient(f, x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_directional(grad, x: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
    return (grad(x + h * v) - grad(x - h * v)) / (2 * h)


# --------------------------------------------------------------------------
# closed forms


def simplex_monomial(exponents) -> float:
    """Integral of prod x_k^{e_k} over the unit simplex (Dirichlet integral)."""
    num = 1
    for e in exponents:
        num *= math.factorial(e)
    return num / math.factorial(sum(exponents) + len(exponents))


def eta_closed_form(J: np.ndarray) -> float:
    """||J||_F^2 / (3 det(J)^(2/3)) straight from the definition."""
    d = np.linalg.det(J)
    if d <= 0:
        return math.inf
    return float(np.sum(J * J) / (3.0 * d ** (2.0 / 3.0)))


def triangle_gauss(n: int):
    """Collapsed Gauss-Legendre rule on the unit triangle, n^2 points."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = (x + 1) / 2, w / 2
    A, B = np.meshgrid(x, x, indexing="ij")
    WA, WB = np.meshgrid(w, w, indexing="ij")
    pts = np.column_stack([(A * (1 - B)).ravel(), B.ravel()])
    return pts, (WA * WB * (1 - B)).ravel()


def bullet_distance(points: np.ndarray, height: float = 1.5) -> np.ndarray:
    """Distance to the smooth bullet (unit hemisphere on a unit cylinder), for
    points whose nearest feature is the sphere (z >= 0), the side (z < 0) or
    the bottom disk (z = -height)."""
    p = np.asarray(points)
    rho = np.hypot(p[..., 0], p[..., 1])
    sphere = np.abs(np.linalg.norm(p, axis=-1) - 1.0)
    side = np.abs(rho - 1.0)
    d = np.where(p[..., 2] >= 0, sphere, side)
    bottom = np.isclose(p[..., 2], -height, atol=1e-12) & (rho < 1 - 1e-9)
    return np.where(bottom, np.abs(p[..., 2] + height), d)
