"""Synthetic meshes and geometry models used by tests and the CLI."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Cylinder, GeometryModel, Plane, Sphere, VirtualCurve, VirtualSurface
from .mesh import TET_FACES, BoundaryClassification, LinearMesh, face_owners, tet_volumes6

# Kuhn subdivision of the unit cube into 6 tets along the main diagonal
_KUHN = [
    [0, 1, 3, 7], [0, 3, 2, 7], [0, 2, 6, 7], [0, 6, 4, 7], [0, 4, 5, 7], [0, 5, 1, 7],
]


def _boundary_faces(tets: np.ndarray):
    """Unshared tet faces, oriented outward, and the owning tet of each."""
    seen: dict = {}
    for e, tet in enumerate(tets.tolist()):
        for f in TET_FACES:
            tri = [tet[i] for i in f]
            key = tuple(sorted(tri))
            if key in seen:
                seen[key] = None
            else:
                seen[key] = (tri, e)
    items = [v for v in seen.values() if v is not None]
    tris = np.array([t for t, _ in items], dtype=np.int64).reshape(-1, 3)
    owners = np.array([e for _, e in items], dtype=np.int64)
    return tris, owners


def _orient(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    tets = tets.copy()
    neg = tet_volumes6(points, tets) < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return tets


def _orient_faces(points: np.ndarray, tets: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Flip triangles so their normals point away from the owning tet."""
    tris = tris.copy()
    owner = face_owners(tets, tris)[:, 0]
    p = points[tris]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inside = points[tets[owner]].mean(axis=1) - p[:, 0]
    flip = np.einsum("ij,ij->i", n, inside) > 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def box_mesh(n: int = 2, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> LinearMesh:
    """Structured box split into 6 n^3 tets; faces marked 1..6 (-x, +x, -y, +y, -z, +z)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    g = [np.linspace(lo[k], hi[k], n + 1) for k in range(3)]
    X, Y, Z = np.meshgrid(*g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    idx = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    tets = []
    for i, j, k in itertools.product(range(n), repeat=3):
        corner = [idx[i + a, j + b, k + c] for a, b, c in itertools.product((0, 1), repeat=3)]
        # corner order: bit (a, b, c) -> 4a + 2b + c; Kuhn needs x-fastest bits
        perm = [corner[(v & 1) * 4 + ((v >> 1) & 1) * 2 + ((v >> 2) & 1)] for v in range(8)]
        tets.extend([[perm[v] for v in t] for t in _KUHN])
    tets = _orient(pts, np.array(tets, dtype=np.int64))
    tris, _ = _boundary_faces(tets)
    c = pts[tris].mean(axis=1)
    marks = np.zeros(len(tris), dtype=np.int64)
    for k in range(3):
        marks[np.isclose(c[:, k], lo[k]) & (marks == 0)] = 2 * k + 1
        marks[np.isclose(c[:, k], hi[k]) & (marks == 0)] = 2 * k + 2
    return LinearMesh(pts, tets, tris, marks)


# --------------------------------------------------------------------------
# bullet: spherical cap + cylinder + flat bottom cap


BULLET_MARKS = {"sphere": 1, "cylinder": 2, "cap": 3, "farfield": 4}

# prism vertex permutations moving a given vertex to slot 0 (bottom 0,1,2; top 3,4,5)
_PRISM_ROT = [
    [0, 1, 2, 3, 4, 5], [1, 2, 0, 4, 5, 3], [2, 0, 1, 5, 3, 4],
    [3, 5, 4, 0, 2, 1], [4, 3, 5, 1, 0, 2], [5, 4, 3, 2, 1, 0],
]


def split_prism(p: list) -> list:
    """Three tets of a prism (bottom p0 p1 p2, top p3 p4 p5).

    Every quadrilateral face is cut along the diagonal through its smallest
    global vertex id, so neighbouring prisms agree on shared faces.
    """
    r = [p[i] for i in _PRISM_ROT[int(np.argmin(p))]]
    if min(r[1], r[5]) < min(r[2], r[4]):
        return [[r[0], r[1], r[2], r[5]], [r[0], r[1], r[5], r[4]], [r[0], r[4], r[5], r[3]]]
    return [[r[0], r[1], r[2], r[4]], [r[0], r[4], r[2], r[5]], [r[0], r[4], r[5], r[3]]]


@dataclass
class BulletFixture:
    mesh: LinearMesh
    model: GeometryModel
    classification: BoundaryClassification
    normal_jump_deg: float
    merged: bool
    h: float


def _ring_strip(a: list, pa: np.ndarray, b: list, pb: np.ndarray) -> list:
    """Triangulate between two closed rings ordered by increasing azimuth."""
    if len(a) == 1 or len(b) == 1:
        apex, ring = (a[0], b) if len(a) == 1 else (b[0], a)
        return [[apex, ring[i], ring[(i + 1) % len(ring)]] for i in range(len(ring))]
    tris = []
    i = j = 0
    na, nb = len(a), len(b)
    while i < na or j < nb:
        next_a = pa[i + 1] if i < na else math.inf
        next_b = pb[j + 1] if j < nb else math.inf
        if next_a <= next_b:
            tris.append([a[i % na], a[(i + 1) % na], b[j % nb]])
            i += 1
        else:
            tris.append([a[i % na], b[(j + 1) % nb], b[j % nb]])
            j += 1
    return tris


def bullet_fixture(h: float = 0.5, normal_jump_deg: float = 0.0, merged: bool = False,
                   far_scale: float = 3.0, growth: float = 1.5, seed: int = 0,
                   jitter: float = 0.0, height: float = 1.5) -> BulletFixture:
    """Bullet body: a spherical cap over a unit cylinder of the given height,
    closed by a flat disk, inside a radially extruded far field.

    With a nonzero ``normal_jump_deg`` the sphere is lowered so that it meets
    the cylinder at that angle between normals; such a model is always built
    with the sphere and the cylinder grouped into one virtual surface, and
    the mesh rows then straddle the crease.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if not 0 <= normal_jump_deg < 45:
        raise ValueError("normal jump must lie in [0, 45) degrees")
    merged = merged or normal_jump_deg > 0
    a = math.tan(math.radians(normal_jump_deg))
    R = math.hypot(1.0, a)
    zc = -a
    theta_max = math.atan2(1.0, a)
    s_junction = R * theta_max
    s_total = s_junction + height
    # meridian stations (arc length along sphere + cylinder)
    if merged:
        n_all = max(3, round(s_total / h))
        d = s_total / n_all
        n1 = max(1, round((s_junction - d / 2) / d))
        s1 = np.linspace(0.0, s_junction - d / 2, n1 + 1)
        n2 = max(1, round((s_total - s_junction - d / 2) / d))
        s2 = np.linspace(s_junction + d / 2, s_total, n2 + 1)
        stations = np.concatenate([s1, s2])
    else:
        n1 = max(2, round(s_junction / h))
        n2 = max(1, round(height / h))
        stations = np.concatenate([np.linspace(0, s_junction, n1 + 1),
                                   np.linspace(s_junction, s_total, n2 + 1)[1:]])

    def meridian(s):
        if s <= s_junction:
            th = s / R
            return R * math.sin(th), zc + R * math.cos(th)
        return 1.0, -(s - s_junction)

    prof = [meridian(s) for s in stations]
    nc = max(1, round(1.0 / h))
    prof += [(1.0 - k / nc, -height) for k in range(1, nc + 1)]
    # rings of points, one per profile station
    pts, rings, angles = [], [], []
    for k, (rho, z) in enumerate(prof):
        if rho < 1e-12:
            rings.append([len(pts)])
            angles.append(np.array([0.0, 2 * math.pi]))
            pts.append((0.0, 0.0, z))
            continue
        n = max(6, int(round(2 * math.pi * rho / h)))
        n += (-n) % 4  # keep the quadrant boundaries as ring points
        off = 0.0
        phi = 2 * math.pi * (np.arange(n) + off) / n
        rings.append(list(range(len(pts), len(pts) + n)))
        angles.append(np.append(phi, phi[0] + 2 * math.pi))
        pts.extend((rho * math.cos(p), rho * math.sin(p), z) for p in phi)
    surf_pts = np.array(pts)
    tris = []
    for k in range(len(rings) - 1):
        tris.extend(_ring_strip(rings[k], angles[k], rings[k + 1], angles[k + 1]))
    tris = np.array(tris, dtype=np.int64)
    # classify surface triangles by centroid
    cen = surf_pts[tris].mean(axis=1)
    on_cap = np.isclose(surf_pts[tris][:, :, 2], -height).all(axis=1)
    if merged:
        marks = np.where(on_cap, BULLET_MARKS["cap"], BULLET_MARKS["sphere"])
    else:
        marks = np.where(on_cap, BULLET_MARKS["cap"],
                         np.where(cen[:, 2] > 0, BULLET_MARKS["sphere"], BULLET_MARKS["cylinder"]))
    # radial layers
    center = np.array([0.0, 0.0, 0.5 * ((zc + R) - height)])
    scales = [1.0]
    dist = float(np.mean(np.linalg.norm(surf_pts - center, axis=1)))
    step = h / dist
    while scales[-1] < far_scale:
        scales.append(min(far_scale, scales[-1] + step))
        step *= growth
        if far_scale - scales[-1] < 0.3 * step:
            scales[-1] = far_scale
    ns = len(surf_pts)
    layers = [center + s * (surf_pts - center) for s in scales]
    rng = np.random.default_rng(seed)
    if jitter > 0:
        for L in layers[1:-1]:
            L += jitter * h * rng.uniform(-1, 1, L.shape)
    vertices = np.vstack(layers)
    tets = []
    for l in range(len(scales) - 1):
        for t in tris.tolist():
            tets.extend(split_prism([l * ns + v for v in t] + [(l + 1) * ns + v for v in t]))
    tets = _orient(vertices, np.array(tets, dtype=np.int64))
    far = tris + (len(scales) - 1) * ns
    triangles = _orient_faces(vertices, tets, np.vstack([tris, far]))
    all_marks = np.concatenate([marks, np.full(len(far), BULLET_MARKS["farfield"])])
    mesh = LinearMesh(vertices, tets, triangles, all_marks)
    model = bullet_model(normal_jump_deg, merged, height)
    walls = [BULLET_MARKS["sphere"], BULLET_MARKS["cap"]]
    if not merged:
        walls.insert(1, BULLET_MARKS["cylinder"])
    cls = BoundaryClassification(walls, [], [BULLET_MARKS["farfield"]])
    return BulletFixture(mesh, model, cls, normal_jump_deg, merged, h)


def bullet_model(normal_jump_deg: float = 0.0, merged: bool = False,
                 height: float = 1.5) -> GeometryModel:
    """Virtual model of the bullet; each round part is four quadrant patches."""
    a = math.tan(math.radians(normal_jump_deg))
    R = math.hypot(1.0, a)
    theta_max = math.atan2(1.0, a)
    q = [(k * math.pi / 2, (k + 1) * math.pi / 2) for k in range(4)]
    sphere = [Sphere((0.0, 0.0, -a), R, trim=(0.0, theta_max, p0, p1)) for p0, p1 in q]
    cyl = [Cylinder((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 1.0, trim=(p0, p1, -height, 0.0))
           for p0, p1 in q]
    cap = [Plane((0.0, 0.0, -height), (0.0, 0.0, -1.0), radius=1.0)]
    if merged or normal_jump_deg > 0:
        surfaces = {1: VirtualSurface(1, sphere + cyl, "body"),
                    3: VirtualSurface(3, cap, "cap")}
        curves = {2: VirtualCurve(2, 1, 3, "cap edge")}
        mark_map = {BULLET_MARKS["sphere"]: 1, BULLET_MARKS["cap"]: 3}
    else:
        surfaces = {1: VirtualSurface(1, sphere, "sphere"),
                    2: VirtualSurface(2, cyl, "cylinder"),
                    3: VirtualSurface(3, cap, "cap")}
        curves = {1: VirtualCurve(1, 1, 2, "junction"), 2: VirtualCurve(2, 2, 3, "cap edge")}
        mark_map = {BULLET_MARKS["sphere"]: 1, BULLET_MARKS["cylinder"]: 2,
                    BULLET_MARKS["cap"]: 3}
    return GeometryModel(surfaces, curves, mark_map)
