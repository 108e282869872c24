"""Virtual geometry built from analytic patches, and its projection operators.

A virtual surface is an ordered union of patches; its projection is the
closest of the per-patch projections.  A virtual curve is never
parameterized: its projection averages the two composed projections onto
the adjacent virtual surfaces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import BoundaryClassification, HighOrderMesh

TWO_PI = 2.0 * math.pi

FREE, FIXED, SURFACE, CURVE = 0, 1, 2, 3
KIND_NAMES = {FREE: "free", FIXED: "fixed", SURFACE: "surface", CURVE: "curve"}


class GeometryError(ValueError):
    """Malformed geometry model or failed lookup."""


class ClassificationError(ValueError):
    """Boundary node cannot be assigned a unique projection target."""


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0:
        raise GeometryError("axis vectors must be nonzero")
    return v / n


def _frame(axis, ref_dir):
    a = _unit(axis)
    r = np.asarray(ref_dir if ref_dir is not None else (1.0, 0.0, 0.0), dtype=float)
    r = r - np.dot(r, a) * a
    if np.linalg.norm(r) < 1e-12:
        r = np.array([0.0, 1.0, 0.0]) - a[1] * a
        if np.linalg.norm(r) < 1e-12:
            r = np.array([0.0, 0.0, 1.0]) - a[2] * a
    e1 = _unit(r)
    e2 = np.cross(a, e1)
    return a, e1, e2


def _clamp_angle(phi: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Closest angle to ``phi`` within the arc [lo, hi] (radians, hi - lo <= 2pi)."""
    span = hi - lo
    rel = np.mod(phi - lo, TWO_PI)
    inside = rel <= span
    # outside: pick the nearer endpoint by angular distance
    d_hi = rel - span
    d_lo = TWO_PI - rel
    out = np.where(d_lo < d_hi, lo, hi)
    return np.where(inside, lo + rel, out)


def _in_box(u, lo, hi):
    return (u >= lo) & (u <= hi)


class Patch:
    """Base class; subclasses implement ``project`` and ``evaluate``."""

    kind = "patch"

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closest points and per-point precision flags (False = low precision)."""
        raise NotImplementedError

    def evaluate(self, u, v) -> np.ndarray:
        raise NotImplementedError

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class Plane(Patch):
    origin: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray | None = None
    trim: tuple | None = None  # (u0, u1, v0, v1) in the (u_axis, normal x u_axis) frame
    radius: float | None = None  # disk trimming about ``origin``
    kind = "plane"

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.normal, self.e1, self.e2 = _frame(self.normal, self.u_axis)
        if self.trim is not None:
            u0, u1, v0, v1 = self.trim
            if not (u1 > u0 and v1 > v0):
                raise GeometryError("empty trimming box")
        if self.radius is not None and not self.radius > 0:
            raise GeometryError("disk radius must be positive")

    def project(self, points):
        p = np.atleast_2d(points) - self.origin
        u = p @ self.e1
        v = p @ self.e2
        if self.trim is not None:
            u0, u1, v0, v1 = self.trim
            u = np.clip(u, u0, u1)
            v = np.clip(v, v0, v1)
        if self.radius is not None:
            r = np.hypot(u, v)
            scale = np.where(r > self.radius, self.radius / np.where(r > 0, r, 1.0), 1.0)
            u, v = u * scale, v * scale
        out = self.origin + u[:, None] * self.e1 + v[:, None] * self.e2
        return out, np.ones(len(out), dtype=bool)

    def evaluate(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return self.origin + u * self.e1 + v * self.e2

    @property
    def bounds(self):
        if self.trim is not None:
            return tuple(self.trim)
        if self.radius is not None:
            r = self.radius
            return (-r, r, -r, r)
        raise GeometryError("untrimmed plane has no parameter bounds")

    def to_dict(self):
        d = {"kind": "plane", "origin": self.origin.tolist(), "normal": self.normal.tolist(),
             "u_axis": self.e1.tolist()}
        if self.trim is not None:
            d["trim"] = list(self.trim)
        if self.radius is not None:
            d["radius"] = self.radius
        return d


@dataclass
class Sphere(Patch):
    center: np.ndarray
    radius: float
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    ref_dir: np.ndarray | None = None
    trim: tuple | None = None  # (theta0, theta1, phi0, phi1): polar from axis, azimuth
    kind = "sphere"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not self.radius > 0:
            raise GeometryError("sphere radius must be positive")
        self.axis, self.e1, self.e2 = _frame(self.axis, self.ref_dir)
        if self.trim is not None:
            t0, t1, p0, p1 = self.trim
            if not (0 <= t0 < t1 <= math.pi and p1 > p0 and p1 - p0 <= TWO_PI + 1e-15):
                raise GeometryError("invalid sphere trimming box")

    def _point(self, theta, phi):
        st = np.sin(theta)[..., None]
        return self.center + self.radius * (
            st * np.cos(phi)[..., None] * self.e1
            + st * np.sin(phi)[..., None] * self.e2
            + np.cos(theta)[..., None] * self.axis
        )

    def evaluate(self, u, v):
        return self._point(np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    @property
    def bounds(self):
        return tuple(self.trim) if self.trim is not None else (0.0, math.pi, 0.0, TWO_PI)

    def project(self, points):
        p = np.atleast_2d(points) - self.center
        r = np.linalg.norm(p, axis=1)
        safe = np.where(r > 0, r, 1.0)[:, None]
        radial = np.where((r > 0)[:, None], p / safe, self.axis)
        out = self.center + self.radius * radial
        if self.trim is None:
            return out, np.ones(len(out), dtype=bool)
        t0, t1, p0, p1 = self.trim
        x, y, z = p @ self.e1, p @ self.e2, p @ self.axis
        rho = np.hypot(x, y)
        theta = np.arctan2(rho, z)
        phi = np.arctan2(y, x)
        inside = _in_box(theta, t0, t1) & (np.mod(phi - p0, TWO_PI) <= p1 - p0)
        if np.all(inside):
            return out, np.ones(len(out), dtype=bool)
        idx = np.flatnonzero(~inside)
        q = p[idx]
        cands = []
        # parallels theta = t0, t1 at the nearest admissible azimuth
        phc = _clamp_angle(phi[idx], p0, p1)
        for tb in (t0, t1):
            cands.append(self._point(np.full(len(idx), tb), phc))
        # meridians phi = p0, p1: maximize A sin(theta) + B cos(theta)
        for pb in (p0, p1):
            A = rho[idx] * np.cos(pb - phi[idx])
            B = z[idx]
            ts = np.clip(np.arctan2(A, B), t0, t1)
            cands.append(self._point(ts, np.full(len(idx), pb)))
        cands = np.stack(cands)  # (4, m, 3)
        d = np.linalg.norm(cands - (q + self.center)[None], axis=2)
        best = np.argmin(d, axis=0)
        out[idx] = cands[best, np.arange(len(idx))]
        return out, np.ones(len(out), dtype=bool)

    def to_dict(self):
        d = {"kind": "sphere", "center": self.center.tolist(), "radius": self.radius,
             "axis": self.axis.tolist(), "ref_dir": self.e1.tolist()}
        if self.trim is not None:
            d["trim"] = list(self.trim)
        return d


@dataclass
class Cylinder(Patch):
    center: np.ndarray
    axis: np.ndarray
    radius: float
    ref_dir: np.ndarray | None = None
    trim: tuple | None = None  # (phi0, phi1, t0, t1), t measured along axis from center
    kind = "cylinder"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not self.radius > 0:
            raise GeometryError("cylinder radius must be positive")
        self.axis, self.e1, self.e2 = _frame(self.axis, self.ref_dir)
        if self.trim is not None:
            p0, p1, t0, t1 = self.trim
            if not (p1 > p0 and t1 > t0):
                raise GeometryError("invalid cylinder trimming box")

    def evaluate(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return self.center + self.radius * (np.cos(u) * self.e1 + np.sin(u) * self.e2) + v * self.axis

    @property
    def bounds(self):
        if self.trim is None:
            raise GeometryError("untrimmed cylinder has no parameter bounds")
        return tuple(self.trim)

    def project(self, points):
        p = np.atleast_2d(points) - self.center
        x, y, t = p @ self.e1, p @ self.e2, p @ self.axis
        phi = np.arctan2(y, x)
        if self.trim is not None:
            p0, p1, t0, t1 = self.trim
            phi = _clamp_angle(phi, p0, p1)
            t = np.clip(t, t0, t1)
        out = self.evaluate(phi, t)
        return out, np.ones(len(out), dtype=bool)

    def to_dict(self):
        d = {"kind": "cylinder", "center": self.center.tolist(), "axis": self.axis.tolist(),
             "radius": self.radius, "ref_dir": self.e1.tolist()}
        if self.trim is not None:
            d["trim"] = list(self.trim)
        return d


@dataclass
class Cone(Patch):
    """One nappe of a circular cone; ``t`` is the distance from the apex along a generator."""

    apex: np.ndarray
    axis: np.ndarray
    half_angle: float
    ref_dir: np.ndarray | None = None
    trim: tuple | None = None  # (phi0, phi1, t0, t1), t0 >= 0
    kind = "cone"

    def __post_init__(self):
        self.apex = np.asarray(self.apex, dtype=float)
        if not 0 < self.half_angle < math.pi / 2:
            raise GeometryError("cone half angle must lie in (0, pi/2)")
        self.axis, self.e1, self.e2 = _frame(self.axis, self.ref_dir)
        if self.trim is not None:
            p0, p1, t0, t1 = self.trim
            if not (p1 > p0 and t1 > t0 >= 0):
                raise GeometryError("invalid cone trimming box")

    def evaluate(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        sa, ca = math.sin(self.half_angle), math.cos(self.half_angle)
        return self.apex + v * (sa * (np.cos(u) * self.e1 + np.sin(u) * self.e2) + ca * self.axis)

    @property
    def bounds(self):
        if self.trim is None:
            raise GeometryError("untrimmed cone has no parameter bounds")
        return tuple(self.trim)

    def project(self, points):
        p = np.atleast_2d(points) - self.apex
        x, y, z = p @ self.e1, p @ self.e2, p @ self.axis
        phi = np.arctan2(y, x)
        rho = np.hypot(x, y)
        lo, hi = 0.0, np.inf
        if self.trim is not None:
            p0, p1, lo, hi = self.trim
            phi = _clamp_angle(phi, p0, p1)
            rho = rho * np.cos(phi - np.arctan2(y, x))
        sa, ca = math.sin(self.half_angle), math.cos(self.half_angle)
        s = np.clip(rho * sa + z * ca, lo, hi)
        out = self.evaluate(phi, s)
        return out, np.ones(len(out), dtype=bool)

    def to_dict(self):
        d = {"kind": "cone", "apex": self.apex.tolist(), "axis": self.axis.tolist(),
             "half_angle": self.half_angle, "ref_dir": self.e1.tolist()}
        if self.trim is not None:
            d["trim"] = list(self.trim)
        return d


@dataclass
class Torus(Patch):
    center: np.ndarray
    axis: np.ndarray
    major_radius: float
    minor_radius: float
    ref_dir: np.ndarray | None = None
    trim: tuple | None = None  # (phi0, phi1, psi0, psi1)
    kind = "torus"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not self.major_radius > self.minor_radius > 0:
            raise GeometryError("torus needs major > minor > 0")
        self.axis, self.e1, self.e2 = _frame(self.axis, self.ref_dir)

    def evaluate(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        radial = np.cos(u) * self.e1 + np.sin(u) * self.e2
        return (self.center + (self.major_radius + self.minor_radius * np.cos(v)) * radial
                + self.minor_radius * np.sin(v) * self.axis)

    @property
    def bounds(self):
        return tuple(self.trim) if self.trim is not None else (0.0, TWO_PI, 0.0, TWO_PI)

    def project(self, points):
        p = np.atleast_2d(points) - self.center
        x, y, z = p @ self.e1, p @ self.e2, p @ self.axis
        phi = np.arctan2(y, x)
        if self.trim is not None:
            phi = _clamp_angle(phi, self.trim[0], self.trim[1])
        # coordinates in the meridian plane of phi
        w = x * np.cos(phi) + y * np.sin(phi) - self.major_radius
        psi = np.arctan2(z, w)
        if self.trim is not None:
            psi = _clamp_angle(psi, self.trim[2], self.trim[3])
        out = self.evaluate(phi, psi)
        return out, np.ones(len(out), dtype=bool)

    def to_dict(self):
        d = {"kind": "torus", "center": self.center.tolist(), "axis": self.axis.tolist(),
             "major_radius": self.major_radius, "minor_radius": self.minor_radius,
             "ref_dir": self.e1.tolist()}
        if self.trim is not None:
            d["trim"] = list(self.trim)
        return d


def _bernstein(n: int, t: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Bernstein basis (or its derivative) of degree n at t, shape (..., n+1)."""
    t = np.asarray(t, dtype=float)[..., None]
    k = np.arange(n + 1)
    if deriv == 0:
        c = np.array([math.comb(n, i) for i in k], dtype=float)
        return c * t**k * (1 - t) ** (n - k)
    if n == 0:
        return np.zeros(t.shape[:-1] + (1,))
    lower = _bernstein(n - 1, t[..., 0], deriv - 1)
    pad = np.zeros(lower.shape[:-1] + (1,))
    return n * (np.concatenate([pad, lower], -1) - np.concatenate([lower, pad], -1))


@dataclass
class BezierPatch(Patch):
    """Tensor-product Bezier patch over [0, 1]^2, bi-degree at most 3."""

    control_points: np.ndarray  # (m+1, n+1, 3)
    kind = "bezier"

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float)
        m1, n1, d = self.control_points.shape
        if d != 3 or not (2 <= m1 <= 4 and 2 <= n1 <= 4):
            raise GeometryError("Bezier patch needs (m+1, n+1, 3) control points, m, n in 1..3")
        pts = self.control_points.reshape(-1, 3)
        self.size = float(np.linalg.norm(pts.max(0) - pts.min(0))) or 1.0

    @property
    def bounds(self):
        return (0.0, 1.0, 0.0, 1.0)

    def _derivs(self, u, v, order=2):
        m, n = self.control_points.shape[0] - 1, self.control_points.shape[1] - 1
        P = self.control_points
        Bu = [_bernstein(m, u, k) for k in range(order + 1)]
        Bv = [_bernstein(n, v, k) for k in range(order + 1)]
        f = lambda a, b: np.einsum("...i,...j,ijk->...k", Bu[a], Bv[b], P)  # noqa: E731
        if order == 0:
            return f(0, 0)
        return f(0, 0), f(1, 0), f(0, 1), f(2, 0), f(1, 1), f(0, 2)

    def evaluate(self, u, v):
        return self._derivs(np.asarray(u, dtype=float), np.asarray(v, dtype=float), 0)

    def project(self, points, starts: int = 4, iters: int = 60):
        p = np.atleast_2d(points).astype(float)
        npt = len(p)
        g = (np.arange(starts) + 0.5) / starts
        U0, V0 = np.meshgrid(g, g, indexing="ij")
        u = np.tile(U0.ravel(), npt)
        v = np.tile(V0.ravel(), npt)
        target = np.repeat(p, starts * starts, axis=0)
        tol = 1e-15
        for _ in range(iters):
            S, Su, Sv, Suu, Suv, Svv = self._derivs(u, v)
            r = S - target
            gu = np.einsum("ij,ij->i", Su, r)
            gv = np.einsum("ij,ij->i", Sv, r)
            huu = np.einsum("ij,ij->i", Su, Su) + np.einsum("ij,ij->i", Suu, r)
            huv = np.einsum("ij,ij->i", Su, Sv) + np.einsum("ij,ij->i", Suv, r)
            hvv = np.einsum("ij,ij->i", Sv, Sv) + np.einsum("ij,ij->i", Svv, r)
            # bound constraints: freeze coordinates pushing outward at a bound
            fu = ~(((u <= 0) & (gu > 0)) | ((u >= 1) & (gu < 0)))
            fv = ~(((v <= 0) & (gv > 0)) | ((v >= 1) & (gv < 0)))
            gu = np.where(fu, gu, 0.0)
            gv = np.where(fv, gv, 0.0)
            huv = np.where(fu & fv, huv, 0.0)
            huu = np.where(fu, huu, 1.0)
            hvv = np.where(fv, hvv, 1.0)
            det = huu * hvv - huv * huv
            # fall back to a scaled gradient step where the Hessian is not PD
            pd = (huu > 0) & (det > 1e-14 * (huu * hvv + 1e-300))
            du = np.where(pd, -(hvv * gu - huv * gv) / np.where(pd, det, 1.0), -gu)
            dv = np.where(pd, -(huu * gv - huv * gu) / np.where(pd, det, 1.0), -gv)
            step = np.ones_like(u)
            f0 = 0.5 * np.einsum("ij,ij->i", r, r)
            for _ in range(30):
                un = np.clip(u + step * du, 0.0, 1.0)
                vn = np.clip(v + step * dv, 0.0, 1.0)
                rn = self._derivs(un, vn, 0) - target
                fn = 0.5 * np.einsum("ij,ij->i", rn, rn)
                bad = fn > f0
                if not np.any(bad):
                    break
                step = np.where(bad, step * 0.5, step)
            moved = np.abs(un - u) + np.abs(vn - v)
            u, v = un, vn
            if np.all(moved < tol):
                break
        S, Su, Sv, *_ = self._derivs(u, v)
        r = S - target
        dist = np.einsum("ij,ij->i", r, r).reshape(npt, -1)
        best = np.argmin(dist, axis=1)
        sel = np.arange(npt) * starts * starts + best
        # first-order optimality of the winner (projected gradient)
        gu = np.einsum("ij,ij->i", Su[sel], r[sel])
        gv = np.einsum("ij,ij->i", Sv[sel], r[sel])
        us, vs = u[sel], v[sel]
        gu = np.where(((us <= 0) & (gu > 0)) | ((us >= 1) & (gu < 0)), 0.0, gu)
        gv = np.where(((vs <= 0) & (gv > 0)) | ((vs >= 1) & (gv < 0)), 0.0, gv)
        ok = np.hypot(gu, gv) <= 1e-9 * self.size**2
        out = S[sel].copy()
        if not np.all(ok):
            out[~ok] = self._dense_fallback(p[~ok])
        return out, ok

    def _dense_fallback(self, p, n: int = 401):
        g = np.linspace(0.0, 1.0, n)
        U, V = np.meshgrid(g, g, indexing="ij")
        S = self.evaluate(U.ravel(), V.ravel())
        out = np.empty_like(p)
        for i, x in enumerate(p):
            out[i] = S[np.argmin(np.sum((S - x) ** 2, axis=1))]
        return out

    def to_dict(self):
        return {"kind": "bezier", "control_points": self.control_points.tolist()}


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Closest points from each point in ``p`` (n, 3) to triangles (t, 3); shape (n, t, 3)."""
    p = p[:, None, :]
    ab, ac = b - a, c - a
    ap = p - a
    d1 = np.einsum("ntk,tk->nt", ap, ab)
    d2 = np.einsum("ntk,tk->nt", ap, ac)
    bp = p - b
    d3 = np.einsum("ntk,tk->nt", bp, ab)
    d4 = np.einsum("ntk,tk->nt", bp, ac)
    cp = p - c
    d5 = np.einsum("ntk,tk->nt", cp, ab)
    d6 = np.einsum("ntk,tk->nt", cp, ac)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        res = a + v[..., None] * ab + w[..., None] * ac
        # edge regions
        t_ab = d1 / (d1 - d3)
        e_ab = a + t_ab[..., None] * ab
        t_ac = d2 / (d2 - d6)
        e_ac = a + t_ac[..., None] * ac
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        e_bc = b + t_bc[..., None] * (c - b)
    a_, b_, c_ = (np.broadcast_to(x, res.shape) for x in (a, b, c))
    res = np.where(((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[..., None], e_bc, res)
    res = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None], e_ac, res)
    res = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None], e_ab, res)
    res = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c_, res)
    res = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b_, res)
    res = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a_, res)
    return res


@dataclass
class TriangulatedPatch(Patch):
    vertices: np.ndarray
    triangles: np.ndarray
    kind = "triangulated"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) == 0:
            raise GeometryError("triangulated patch needs at least one triangle")

    def project(self, points, chunk: int = 256):
        p = np.atleast_2d(points).astype(float)
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        out = np.empty_like(p)
        for s in range(0, len(p), chunk):
            q = p[s:s + chunk]
            cp = closest_point_on_triangles(q, a, b, c)
            d = np.sum((cp - q[:, None]) ** 2, axis=2)
            best = np.argmin(d, axis=1)
            out[s:s + chunk] = cp[np.arange(len(q)), best]
        return out, np.ones(len(p), dtype=bool)

    def evaluate(self, u, v):
        raise GeometryError("triangulated patches have no global parameterization")

    def to_dict(self):
        return {"kind": "triangulated", "vertices": self.vertices.tolist(),
                "triangles": self.triangles.tolist()}


_PATCH_KINDS = {
    "plane": Plane, "sphere": Sphere, "cylinder": Cylinder, "cone": Cone,
    "torus": Torus, "bezier": BezierPatch, "triangulated": TriangulatedPatch,
}


def patch_from_dict(d: dict) -> Patch:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _PATCH_KINDS:
        raise GeometryError(f"unknown patch kind {kind!r}")
    if "trim" in d and d["trim"] is not None:
        d["trim"] = tuple(float(t) for t in d["trim"])
    try:
        return _PATCH_KINDS[kind](**d)
    except TypeError as exc:
        raise GeometryError(f"bad parameters for {kind} patch: {exc}") from None


# --------------------------------------------------------------------------
# virtual entities


@dataclass
class VirtualSurface:
    id: int
    patches: list
    name: str = ""

    def __post_init__(self):
        if not self.patches:
            raise GeometryError(f"virtual surface {self.id} has no patches")

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        best, ok = self.patches[0].project(p)
        dist = np.sum((best - p) ** 2, axis=1)
        for patch in self.patches[1:]:
            q, qok = patch.project(p)
            d = np.sum((q - p) ** 2, axis=1)
            closer = d < dist  # strict: ties keep the lower patch index
            best[closer] = q[closer]
            ok[closer] = qok[closer]
            dist = np.where(closer, d, dist)
        return best, ok


@dataclass
class VirtualCurve:
    id: int
    left: int
    right: int
    name: str = ""

    def __post_init__(self):
        if self.left == self.right:
            raise GeometryError(f"virtual curve {self.id} joins surface {self.left} to itself")


@dataclass
class GeometryModel:
    surfaces: dict
    curves: dict
    mark_map: dict
    fixed_vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.fixed_vertices = np.asarray(self.fixed_vertices, dtype=float).reshape(-1, 3)
        for c in self.curves.values():
            for s in (c.left, c.right):
                if s not in self.surfaces:
                    raise GeometryError(f"curve {c.id} references unknown surface {s}")
        for m, s in self.mark_map.items():
            if s not in self.surfaces:
                raise GeometryError(f"mark {m} maps to unknown surface {s}")
        self._curve_by_pair = {frozenset((c.left, c.right)): c.id for c in self.curves.values()}

    def surface(self, sid: int) -> VirtualSurface:
        try:
            return self.surfaces[sid]
        except KeyError:
            raise GeometryError(f"unknown virtual surface {sid}") from None

    def curve(self, cid: int) -> VirtualCurve:
        try:
            return self.curves[cid]
        except KeyError:
            raise GeometryError(f"unknown virtual curve {cid}") from None

    def curve_between(self, s1: int, s2: int) -> int | None:
        return self._curve_by_pair.get(frozenset((s1, s2)))

    def surface_for_mark(self, mark: int) -> int:
        try:
            return self.mark_map[int(mark)]
        except KeyError:
            raise GeometryError(f"boundary mark {mark} has no virtual surface") from None

    # -------------------------------------------------------------- file I/O

    def to_dict(self) -> dict:
        return {
            "virtual_surfaces": [
                {"id": s.id, "name": s.name, "patches": [p.to_dict() for p in s.patches]}
                for s in self.surfaces.values()
            ],
            "virtual_curves": [
                {"id": c.id, "name": c.name, "left": c.left, "right": c.right}
                for c in self.curves.values()
            ],
            "mark_map": {str(k): v for k, v in sorted(self.mark_map.items())},
            "fixed_vertices": self.fixed_vertices.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryModel":
        try:
            surfaces = {}
            for s in d["virtual_surfaces"]:
                sid = int(s["id"])
                if sid in surfaces:
                    raise GeometryError(f"duplicate virtual surface id {sid}")
                surfaces[sid] = VirtualSurface(
                    sid, [patch_from_dict(p) for p in s["patches"]], s.get("name", "")
                )
            curves = {}
            for c in d.get("virtual_curves", []):
                cid = int(c["id"])
                if cid in curves:
                    raise GeometryError(f"duplicate virtual curve id {cid}")
                curves[cid] = VirtualCurve(cid, int(c["left"]), int(c["right"]), c.get("name", ""))
            mark_map = {int(k): int(v) for k, v in d.get("mark_map", {}).items()}
            fixed = d.get("fixed_vertices", [])
        except KeyError as exc:
            raise GeometryError(f"geometry document lacks field {exc}") from None
        return cls(surfaces, curves, mark_map, np.asarray(fixed, dtype=float).reshape(-1, 3))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "GeometryModel":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise GeometryError(f"cannot read geometry file {path}: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise GeometryError(f"{path}: invalid JSON: {exc}") from None


def project_to_patch(patch: Patch, point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    out, _ = patch.project(p.reshape(-1, 3))
    return out.reshape(p.shape)


def project_to_virtual_surface(model: GeometryModel, surface_id: int, point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    out, _ = model.surface(surface_id).project(p.reshape(-1, 3))
    return out.reshape(p.shape)


def project_to_virtual_curve(model: GeometryModel, curve_id: int, point) -> np.ndarray:
    """1/2 (P_S1(P_S2(x)) + P_S2(P_S1(x)))."""
    p = np.asarray(point, dtype=float)
    out, _ = _curve_projection(model, model.curve(curve_id), p.reshape(-1, 3))
    return out.reshape(p.shape)


def _curve_projection(model: GeometryModel, curve: VirtualCurve, p: np.ndarray):
    s1, s2 = model.surface(curve.left), model.surface(curve.right)
    a, ok_a = s1.project(p)
    b, ok_b = s2.project(p)
    ab, ok_ab = s2.project(a)
    ba, ok_ba = s1.project(b)
    return 0.5 * (ba + ab), ok_a & ok_b & ok_ab & ok_ba


# --------------------------------------------------------------------------
# boundary node targets


@dataclass
class NodeTargets:
    kind: np.ndarray  # per node: FREE / FIXED / SURFACE / CURVE
    entity: np.ndarray  # virtual surface or curve id (-1 otherwise)
    corners: list = field(default_factory=list)

    def nodes_of(self, kind: int) -> np.ndarray:
        return np.flatnonzero(self.kind == kind)

    def counts(self) -> dict:
        return {KIND_NAMES[k]: int(np.sum(self.kind == k)) for k in KIND_NAMES}


def classify_boundary_nodes(
    mesh: HighOrderMesh,
    model: GeometryModel,
    classification: BoundaryClassification,
    frozen_faces=(),
    vertex_tol: float = 1e-9,
) -> NodeTargets:
    """Assign each node exactly one target (free, fixed, surface or curve)."""
    classification.check_covers(mesh.face_marks)
    n = mesh.n_nodes
    kind = np.full(n, FREE, dtype=np.int8)
    entity = np.full(n, -1, dtype=np.int64)
    on_surf: dict[int, set] = {}
    fixed = np.zeros(n, dtype=bool)
    for face, mark in zip(mesh.faces.tolist(), mesh.face_marks.tolist()):
        if classification.role(mark) == "farfield":
            fixed[face] = True
            continue
        sid = model.surface_for_mark(mark)
        for v in face:
            on_surf.setdefault(v, set()).add(sid)
    frozen = np.asarray(list(frozen_faces), dtype=np.int64)
    if frozen.size:
        fixed[np.unique(mesh.faces[frozen])] = True
    if len(model.fixed_vertices):
        tol = vertex_tol * mesh.characteristic_length
        bnd_vertices = np.array(sorted(v for v in on_surf if v < mesh.n_vertices), dtype=np.int64)
        if bnd_vertices.size:
            x = mesh.coords[bnd_vertices]
            d = np.linalg.norm(x[:, None] - model.fixed_vertices[None], axis=2)
            fixed[bnd_vertices[d.min(axis=1) <= tol]] = True
    corners = []
    for v, surfs in sorted(on_surf.items()):
        if fixed[v]:
            continue
        if len(surfs) == 1:
            kind[v] = SURFACE
            entity[v] = next(iter(surfs))
        elif len(surfs) == 2:
            s1, s2 = sorted(surfs)
            cid = model.curve_between(s1, s2)
            if cid is None:
                raise ClassificationError(
                    f"node {v} lies on virtual surfaces {sorted(surfs)} with no declared curve"
                )
            kind[v] = CURVE
            entity[v] = cid
        else:
            ss = sorted(surfs)
            if not any(model.curve_between(a, b) is not None
                       for i, a in enumerate(ss) for b in ss[i + 1:]):
                raise ClassificationError(
                    f"node {v} lies on virtual surfaces {ss} with no declared curve"
                )
            corners.append(v)
            fixed[v] = True
    kind[fixed] = FIXED
    entity[fixed] = -1
    return NodeTargets(kind, entity, corners)


def project_targets(model: GeometryModel, targets: NodeTargets, coords: np.ndarray):
    """Projection of every surface/curve node; others keep their coordinates.

    Returns (targets array, indices of nodes with low-precision projections).
    """
    out = coords.copy()
    low = []
    for kind in (SURFACE, CURVE):
        nodes = targets.nodes_of(kind)
        for eid in np.unique(targets.entity[nodes]):
            sel = nodes[targets.entity[nodes] == eid]
            if kind == SURFACE:
                proj, ok = model.surface(int(eid)).project(coords[sel])
            else:
                proj, ok = _curve_projection(model, model.curve(int(eid)), coords[sel])
            out[sel] = proj
            low.extend(sel[~ok].tolist())
    return out, sorted(low)
