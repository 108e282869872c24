"""Gmsh MSH reading and writing (ASCII 4.1, plus 2.2 input) and VTU export.

High-order elements are written with Gmsh's node ordering.  Internally the
package orders element nodes as documented in :mod:`hocurve.reference`;
:func:`gmsh_permutation` maps between the two.

Curved files carry the straight-sided vertex positions of the input mesh in
a ``$NodeData`` block named ``initial_position`` so that quality metrics,
which are measured against the initial elements, can be recomputed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .mesh import BoundaryClassification, HighOrderMesh, LinearMesh
from .reference import build_reference

ROLE_NAMES = ("wall", "symmetry", "farfield")

TET_TYPES = {4: 1, 11: 2, 29: 3, 30: 4}
TRI_TYPES = {2: 1, 9: 2, 21: 3, 23: 4}
TET_TYPE_OF = {q: t for t, q in TET_TYPES.items()}
TRI_TYPE_OF = {q: t for t, q in TRI_TYPES.items()}
# points and lines are tolerated and skipped
IGNORED_TYPES = {15, 1, 8, 26, 27}
NODES_PER_TYPE = {15: 1, 1: 2, 8: 3, 26: 4, 27: 5, 2: 3, 9: 6, 21: 10, 23: 15,
                  4: 4, 11: 10, 29: 20, 30: 35}

# Gmsh local edge and face tables; nodes run from the first listed vertex.
_GMSH_TET_EDGES = ((0, 1), (1, 2), (2, 0), (3, 0), (3, 2), (3, 1))
_GMSH_TET_FACES = ((0, 2, 1), (0, 1, 3), (0, 3, 2), (3, 1, 2))
_GMSH_TRI_EDGES = ((0, 1), (1, 2), (2, 0))


class MeshParseError(ValueError):
    """Malformed or unsupported mesh file; carries the offending line."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UnsupportedElementError(MeshParseError):
    pass


# --------------------------------------------------------------------------
# node ordering


def gmsh_alphas(dimension: int, degree: int) -> np.ndarray:
    """Barycentric multi-indices of the Gmsh node ordering (degree <= 4)."""
    eye = np.eye(dimension + 1, dtype=np.int64) * degree
    out = [tuple(r) for r in eye]
    edges = _GMSH_TET_EDGES if dimension == 3 else _GMSH_TRI_EDGES
    for a, b in edges:
        for k in range(1, degree):
            out.append(tuple((eye[a] * (degree - k) + eye[b] * k) // degree))
    if dimension == 2:
        if degree >= 3:
            out.extend(_interior_triangle(eye, (0, 1, 2), degree))
        return np.array(out, dtype=np.int64)
    if degree >= 3:
        for face in _GMSH_TET_FACES:
            out.extend(_interior_triangle(eye, face, degree))
    if degree >= 4:
        out.append(tuple(np.ones(4, dtype=np.int64) * (degree // 4)))
    return np.array(out, dtype=np.int64)


def _interior_triangle(eye, face, degree):
    """Interior nodes of a face, as a degree-3-lower triangle in face order."""
    a, b, c = (eye[i] // degree for i in face)
    base = a + b + c
    inner = degree - 3
    if inner == 0:
        return [tuple(base)]
    corners = [base + inner * a, base + inner * b, base + inner * c]
    out = [tuple(p) for p in corners]
    # degree <= 4 leaves no further edge or interior nodes
    return out


@lru_cache(maxsize=None)
def gmsh_permutation(dimension: int, degree: int) -> np.ndarray:
    """``perm`` with ``gmsh_nodes = internal_nodes[perm]``."""
    ours = {tuple(a): i for i, a in enumerate(build_reference(dimension, degree).alphas.tolist())}
    return np.array([ours[tuple(a)] for a in gmsh_alphas(dimension, degree).tolist()],
                    dtype=np.int64)


# --------------------------------------------------------------------------
# reading


@dataclass
class MshContent:
    """Raw element data of a tetrahedral MSH file (0-based node indices)."""

    version: str
    coords: np.ndarray
    tets: np.ndarray  # gmsh ordering
    tet_type: int
    triangles: np.ndarray  # gmsh ordering
    tri_type: int | None
    marks: np.ndarray
    physical_names: dict = field(default_factory=dict)  # (dim, tag) -> name
    node_data: dict = field(default_factory=dict)  # name -> (node indices, values)


class _Lines:
    def __init__(self, path):
        self.path = path
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            self.lines = fh.read().splitlines()
        self.i = 0

    @property
    def lineno(self) -> int:
        return self.i

    def next(self) -> str:
        while self.i < len(self.lines):
            s = self.lines[self.i].strip()
            self.i += 1
            if s:
                return s
        raise MeshParseError("unexpected end of file", self.i, self.path)

    def ints(self, count: int | None = None) -> list[int]:
        s = self.next()
        try:
            vals = [int(t) for t in s.split()]
        except ValueError:
            raise MeshParseError(f"expected integers, got {s!r}", self.i, self.path) from None
        if count is not None and len(vals) < count:
            raise MeshParseError(f"expected {count} integers, got {len(vals)}", self.i, self.path)
        return vals

    def floats(self, count: int) -> list[float]:
        s = self.next()
        try:
            vals = [float(t) for t in s.split()]
        except ValueError:
            raise MeshParseError(f"expected numbers, got {s!r}", self.i, self.path) from None
        if len(vals) < count:
            raise MeshParseError(f"expected {count} numbers, got {len(vals)}", self.i, self.path)
        return vals

    def expect(self, token: str) -> None:
        s = self.next()
        if s != token:
            raise MeshParseError(f"expected {token}, got {s!r}", self.i, self.path)

    def error(self, msg: str, cls=MeshParseError):
        return cls(msg, self.i, self.path)


def _skip_section(L: _Lines, name: str) -> None:
    end = "$End" + name[1:]
    while True:
        if L.next() == end:
            return


def read_msh(path) -> MshContent:
    """Parse an ASCII MSH 4.1 or 2.2 file holding tetrahedra and triangles."""
    path = Path(path)
    try:
        L = _Lines(path)
    except OSError as exc:
        raise MeshParseError(f"cannot read mesh file: {exc.strerror}", path=path) from exc
    version = None
    names: dict = {}
    entity_phys: dict = {}
    node_tags: list = []
    node_xyz: list = []
    blocks: list = []  # (type, entity dim, entity tag, phys tag or None, rows, line)
    node_data: dict = {}
    while L.i < len(L.lines):
        try:
            s = L.next()
        except MeshParseError:
            break
        if not s.startswith("$"):
            raise L.error(f"expected a section header, got {s!r}")
        if s == "$MeshFormat":
            parts = L.next().split()
            if len(parts) < 3:
                raise L.error("malformed $MeshFormat")
            version = parts[0]
            if version not in ("4.1", "2.2"):
                raise L.error(f"unsupported MSH version {version}")
            if parts[1] != "0":
                raise L.error("binary MSH files are not supported")
            L.expect("$EndMeshFormat")
        elif version is None:
            raise L.error("missing $MeshFormat")
        elif s == "$PhysicalNames":
            (n,) = L.ints(1)[:1]
            for _ in range(n):
                line = L.next()
                parts = line.split(maxsplit=2)
                if len(parts) < 3:
                    raise L.error(f"malformed physical name {line!r}")
                try:
                    names[(int(parts[0]), int(parts[1]))] = parts[2].strip().strip('"')
                except ValueError:
                    raise L.error(f"malformed physical name {line!r}") from None
            L.expect("$EndPhysicalNames")
        elif s == "$Entities" and version == "4.1":
            counts = L.ints(4)
            for dim, n in enumerate(counts[:4]):
                for _ in range(n):
                    vals = L.floats(1)
                    tag = int(vals[0])
                    k = 4 if dim == 0 else 7
                    if len(vals) <= k:
                        raise L.error("malformed entity record")
                    nphys = int(vals[k])
                    entity_phys[(dim, tag)] = [int(v) for v in vals[k + 1:k + 1 + nphys]]
            L.expect("$EndEntities")
        elif s == "$Nodes":
            if version == "4.1":
                nblocks, nnodes = L.ints(4)[:2]
                for _ in range(nblocks):
                    _, _, parametric, n = L.ints(4)[:4]
                    tags = [L.ints(1)[0] for _ in range(n)]
                    for _ in range(n):
                        xyz = L.floats(3)
                        node_xyz.append(xyz[:3])
                    if parametric:
                        raise L.error("parametric nodes are not supported")
                    node_tags.extend(tags)
                if len(node_tags) != nnodes:
                    raise L.error(f"$Nodes declares {nnodes} nodes, found {len(node_tags)}")
            else:
                (n,) = L.ints(1)[:1]
                for _ in range(n):
                    vals = L.floats(4)
                    node_tags.append(int(vals[0]))
                    node_xyz.append(vals[1:4])
            L.expect("$EndNodes")
        elif s == "$Elements":
            if version == "4.1":
                nblocks = L.ints(4)[0]
                for _ in range(nblocks):
                    edim, etag, etype, n = L.ints(4)[:4]
                    start = L.lineno + 1
                    rows = [L.ints() for _ in range(n)]
                    blocks.append((etype, edim, etag, None, rows, start))
            else:
                (n,) = L.ints(1)[:1]
                for _ in range(n):
                    vals = L.ints(3)
                    etype, ntags = vals[1], vals[2]
                    tags = vals[3:3 + ntags]
                    phys = tags[0] if ntags >= 1 else 0
                    geo = tags[1] if ntags >= 2 else 0
                    row = [vals[0]] + vals[3 + ntags:]
                    blocks.append((etype, None, geo, phys, [row], L.lineno))
            L.expect("$EndElements")
        elif s == "$NodeData":
            name, idx, vals = _read_node_data(L)
            node_data[name] = (idx, vals)
        else:
            _skip_section(L, s)
    if version is None:
        raise MeshParseError("missing $MeshFormat", path=path)
    if not node_tags:
        raise MeshParseError("file has no nodes", path=path)

    tag_index = {t: i for i, t in enumerate(node_tags)}
    if len(tag_index) != len(node_tags):
        raise MeshParseError("duplicate node tags", path=path)
    tets, tris, marks, tet_tags, tri_tags = [], [], [], [], []
    tet_type = tri_type = None
    used = np.zeros(len(node_tags), dtype=bool)
    for etype, edim, etag, phys, rows, start in blocks:
        if etype in IGNORED_TYPES:
            continue
        if etype not in TET_TYPES and etype not in TRI_TYPES:
            kind = {3: "quadrangle", 5: "hexahedron", 6: "prism", 7: "pyramid"}.get(
                etype, f"type {etype}")
            raise UnsupportedElementError(f"unsupported element {kind}", start, path)
        nn = NODES_PER_TYPE[etype]
        is_tet = etype in TET_TYPES
        if is_tet:
            if tet_type not in (None, etype):
                raise UnsupportedElementError("mixed tetrahedron degrees", start, path)
            tet_type = etype
        else:
            if tri_type not in (None, etype):
                raise UnsupportedElementError("mixed triangle degrees", start, path)
            tri_type = etype
            mark = phys if version == "2.2" else _mark_for_entity(entity_phys, names, etag)
        for k, row in enumerate(rows):
            line = start + k
            if len(row) != nn + 1:
                raise MeshParseError(f"element needs {nn} nodes, got {len(row) - 1}", line, path)
            try:
                ids = [tag_index[t] for t in row[1:]]
            except KeyError as exc:
                raise MeshParseError(f"element references undefined node {exc.args[0]}",
                                     line, path) from None
            if is_tet:
                tets.append(ids)
                tet_tags.append(row[0])
                used[ids] = True
            else:
                tris.append(ids)
                tri_tags.append(row[0])
                marks.append(mark if version == "4.1" or mark else etag)
    if tet_type is None:
        raise MeshParseError("file has no tetrahedra", path=path)
    if not used.all():
        bad = node_tags[int(np.flatnonzero(~used)[0])]
        raise MeshParseError(f"node {bad} is not referenced by any tetrahedron", path=path)
    data = {}
    for name, (idx, vals) in node_data.items():
        try:
            data[name] = (np.array([tag_index[t] for t in idx], dtype=np.int64), vals)
        except KeyError as exc:
            raise MeshParseError(f"$NodeData references undefined node {exc.args[0]}",
                                 path=path) from None
    # element tags fix the order; blocks group triangles by surface
    to = np.argsort(np.array(tet_tags, dtype=np.int64), kind="stable")
    fo = np.argsort(np.array(tri_tags, dtype=np.int64), kind="stable")
    return MshContent(
        version, np.array(node_xyz, dtype=float), np.array(tets, dtype=np.int64)[to], tet_type,
        np.array(tris, dtype=np.int64).reshape(len(tris), -1)[fo], tri_type,
        np.array(marks, dtype=np.int64)[fo], names, data,
    )


def _mark_for_entity(entity_phys, names, etag) -> int:
    """Physical tag of a surface entity that is not a boundary-role group."""
    phys = entity_phys.get((2, etag), [])
    own = [p for p in phys if names.get((2, p)) not in ROLE_NAMES]
    if own:
        return own[0]
    return phys[0] if phys else etag


def _read_node_data(L: _Lines):
    nstr = L.ints(1)[0]
    strs = [L.next().strip('"') for _ in range(nstr)]
    nreal = L.ints(1)[0]
    for _ in range(nreal):
        L.next()
    nint = L.ints(1)[0]
    ints = [L.ints(1)[0] for _ in range(nint)]
    if nint < 3:
        raise L.error("malformed $NodeData header")
    ncomp, n = ints[1], ints[2]
    idx = np.empty(n, dtype=np.int64)
    vals = np.empty((n, ncomp))
    for k in range(n):
        row = L.floats(ncomp + 1)
        idx[k] = int(row[0])
        vals[k] = row[1:ncomp + 1]
    L.expect("$EndNodeData")
    return (strs[0] if strs else ""), idx, vals


def read_linear_mesh(path) -> LinearMesh:
    """Linear tetrahedral mesh with boundary triangles; physical tags are marks."""
    c = read_msh(path)
    if c.tet_type != 4 or c.tri_type not in (None, 2):
        raise UnsupportedElementError("input mesh must be linear (4-node tets, 3-node triangles)",
                                      path=path)
    return LinearMesh(c.coords, c.tets, c.triangles.reshape(-1, 3), c.marks)


def read_curved_mesh(path) -> HighOrderMesh:
    """High-order mesh written by :func:`write_curved_mesh` (or any Gmsh tet mesh)."""
    c = read_msh(path)
    q = TET_TYPES[c.tet_type]
    if c.tri_type is not None and TRI_TYPES[c.tri_type] != q:
        raise UnsupportedElementError("triangle and tetrahedron degrees differ", path=path)
    inv3 = np.argsort(gmsh_permutation(3, q))
    elems = c.tets[:, inv3]
    faces = np.empty((0, len(build_reference(2, q).alphas)), dtype=np.int64)
    if len(c.triangles):
        faces = c.triangles[:, np.argsort(gmsh_permutation(2, q))]
    # vertices first, each group in file order
    n = len(c.coords)
    is_vertex = np.zeros(n, dtype=bool)
    is_vertex[elems[:, :4]] = True
    order = np.concatenate([np.flatnonzero(is_vertex), np.flatnonzero(~is_vertex)])
    new_id = np.empty(n, dtype=np.int64)
    new_id[order] = np.arange(n)
    coords = c.coords[order]
    nv = int(is_vertex.sum())
    initial = coords[:nv].copy()
    if "initial_position" in c.node_data:
        idx, vals = c.node_data["initial_position"]
        mapped = new_id[idx]
        if np.any(mapped >= nv) or len(np.unique(mapped)) != nv:
            raise MeshParseError("initial_position must cover exactly the vertices", path=path)
        initial[mapped] = vals[:, :3]
    elems, faces = new_id[elems], new_id[faces]
    if len(faces) and np.any(faces[:, :3] >= nv):
        raise MeshParseError("triangle corner is not a tetrahedron vertex", path=path)
    return HighOrderMesh(q, coords, elems, faces, c.marks.copy(), initial)


# --------------------------------------------------------------------------
# writing


def _fmt(v: float) -> str:
    return repr(float(v))


def _mark_names(marks, mark_names: dict | None) -> dict:
    out = {}
    for m in sorted(set(int(x) for x in marks)):
        name = (mark_names or {}).get(m, f"mark_{m}")
        if name in ROLE_NAMES:
            name = f"mark_{m}_{name}"
        out[m] = name
    return out


def write_msh(path, coords: np.ndarray, elements: np.ndarray, faces: np.ndarray,
              marks: np.ndarray, degree: int,
              classification: BoundaryClassification | None = None,
              mark_names: dict | None = None, initial_vertices: np.ndarray | None = None,
              ) -> None:
    """Write an ASCII MSH 4.1 file; element arrays use the internal ordering."""
    path = Path(path)
    marks = np.asarray(marks, dtype=np.int64)
    tet_type, tri_type = TET_TYPE_OF[degree], TRI_TYPE_OF[degree]
    p3, p2 = gmsh_permutation(3, degree), gmsh_permutation(2, degree)
    mnames = _mark_names(marks, mark_names)
    ulist = sorted(mnames)
    top = max(ulist, default=0)
    role_tag = {r: top + 1 + k for k, r in enumerate(ROLE_NAMES)}
    volume_tag = top + 4
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    bbox = " ".join(_fmt(v) for v in (*lo, *hi))
    out = ["$MeshFormat", "4.1 0 8", "$EndMeshFormat", "$PhysicalNames"]
    phys = [(2, m, mnames[m]) for m in ulist]
    if classification is not None:
        phys += [(2, role_tag[r], r) for r in ROLE_NAMES]
    phys.append((3, volume_tag, "domain"))
    out.append(str(len(phys)))
    out += [f'{d} {t} "{n}"' for d, t, n in phys]
    out += ["$EndPhysicalNames", "$Entities", f"0 0 {len(ulist)} 1"]
    for m in ulist:
        tags = [m]
        if classification is not None:
            tags.append(role_tag[classification.role(m)])
        out.append(f"{m} {bbox} {len(tags)} {' '.join(map(str, tags))} 0")
    out.append(f"1 {bbox} 1 {volume_tag} {len(ulist)} {' '.join(map(str, ulist))}".rstrip())
    out.append("$EndEntities")
    n = len(coords)
    out += ["$Nodes", f"1 {n} 1 {n}", f"3 1 0 {n}"]
    out += [str(i + 1) for i in range(n)]
    out += [" ".join(_fmt(v) for v in row) for row in coords]
    out.append("$EndNodes")
    nblocks = len(ulist) + 1
    ne = len(elements) + len(faces)
    out += ["$Elements", f"{nblocks} {ne} 1 {ne}"]
    # element tags: faces 1..nf in input order, then tetrahedra
    for m in ulist:
        sel = np.flatnonzero(marks == m)
        rows = faces[sel][:, p2] + 1
        out.append(f"2 {m} {tri_type} {len(rows)}")
        for t, r in zip(sel + 1, rows):
            out.append(f"{t} " + " ".join(map(str, r)))
    rows = elements[:, p3] + 1
    out.append(f"3 1 {tet_type} {len(rows)}")
    for t, r in enumerate(rows, start=len(faces) + 1):
        out.append(f"{t} " + " ".join(map(str, r)))
    out.append("$EndElements")
    if initial_vertices is not None:
        nv = len(initial_vertices)
        out += ["$NodeData", "1", '"initial_position"', "1", "0.0", "3", "0", "3", str(nv)]
        out += [f"{i + 1} " + " ".join(_fmt(v) for v in row)
                for i, row in enumerate(initial_vertices)]
        out.append("$EndNodeData")
    try:
        path.write_text("\n".join(out) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write mesh file {path}: {exc.strerror}") from exc


def write_linear_mesh(path, mesh: LinearMesh, classification=None, mark_names=None) -> None:
    write_msh(path, mesh.vertices, mesh.tets, mesh.triangles, mesh.marks, 1,
              classification, mark_names)


def write_curved_mesh(path, mesh: HighOrderMesh, classification=None, mark_names=None) -> None:
    write_msh(path, mesh.coords, mesh.elements, mesh.faces, mesh.face_marks, mesh.degree,
              classification, mark_names, initial_vertices=mesh.initial_vertices)


# --------------------------------------------------------------------------
# classification files


def read_classification(path) -> BoundaryClassification:
    import json

    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read classification file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected an object with wall/symmetry/farfield arrays")
    unknown = set(data) - set(ROLE_NAMES)
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    arrays = {}
    for k in ROLE_NAMES:
        v = data.get(k, [])
        if not isinstance(v, list) or not all(isinstance(x, int) for x in v):
            raise ValueError(f"{path}: {k!r} must be an array of integers")
        arrays[k] = v
    return BoundaryClassification(**arrays)


def write_classification(path, classification: BoundaryClassification) -> None:
    import json

    data = {k: sorted(getattr(classification, k)) for k in ROLE_NAMES}
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# visualization


@lru_cache(maxsize=None)
def subdivision(level: int):
    """Reference points and sub-tetrahedra of a uniform level-``level`` split.

    Returns (points (m, 3) in reference coordinates, tets (level**3, 4)).
    The split is the Freudenthal decomposition restricted to the simplex.
    """
    if level < 1:
        raise ValueError("subdivision level must be >= 1")
    n = level
    pts, index = [], {}
    for i in range(n + 1):
        for j in range(n + 1 - i):
            for k in range(n + 1 - i - j):
                index[(i, j, k)] = len(pts)
                pts.append((i, j, k))
    # y = (x1+x2+x3, x2+x3, x3) maps the simplex onto 1 >= y1 >= y2 >= y3 >= 0
    perms = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
    tets = []
    for a in range(n):
        for b in range(n):
            for c in range(n):
                for p in perms:
                    y = [np.array([a, b, c])]
                    for axis in p:
                        step = y[-1].copy()
                        step[axis] += 1
                        y.append(step)
                    cen = np.mean(y, axis=0)
                    if not (n > cen[0] > cen[1] > cen[2] > 0):
                        continue
                    xs = [(int(v[0] - v[1]), int(v[1] - v[2]), int(v[2])) for v in y]
                    ids = [index[x] for x in xs]
                    P = np.array(xs, dtype=float)
                    if np.linalg.det(P[1:] - P[0]) < 0:
                        ids[2], ids[3] = ids[3], ids[2]
                    tets.append(ids)
    return np.array(pts, dtype=float) / n, np.array(tets, dtype=np.int64)


def write_visualization(mesh: HighOrderMesh, level: int, path, qualities=None) -> None:
    """VTU file of level**3 linear sub-tets per element with quality cell data."""
    pts_ref, sub = subdivision(level)
    P = mesh.map_points(np.arange(mesh.n_elements), pts_ref).reshape(-1, 3)
    m = len(pts_ref)
    conn = (sub[None, :, :] + m * np.arange(mesh.n_elements)[:, None, None]).reshape(-1, 4)
    ncell = len(conn)
    per = len(sub)
    cell_data = {"element": np.repeat(np.arange(mesh.n_elements), per)}
    if qualities is not None:
        cell_data["q_S"] = np.repeat([q.shape_quality for q in qualities], per)
        cell_data["q_SJ"] = np.repeat([q.scaled_jacobian for q in qualities], per)

    def arr(a, fmt):
        return "\n".join(" ".join(fmt % v for v in row) for row in np.atleast_2d(a))

    lines = [
        '<?xml version="1.0"?>',
        '<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">',
        "<UnstructuredGrid>",
        f'<Piece NumberOfPoints="{len(P)}" NumberOfCells="{ncell}">',
        "<Points>",
        '<DataArray type="Float64" NumberOfComponents="3" format="ascii">',
        arr(P, "%.17g"),
        "</DataArray>", "</Points>", "<Cells>",
        '<DataArray type="Int64" Name="connectivity" format="ascii">',
        arr(conn, "%d"),
        "</DataArray>",
        '<DataArray type="Int64" Name="offsets" format="ascii">',
        arr((np.arange(ncell) + 1)[:, None] * 4, "%d"),
        "</DataArray>",
        '<DataArray type="UInt8" Name="types" format="ascii">',
        arr(np.full((ncell, 1), 10), "%d"),
        "</DataArray>", "</Cells>", "<CellData>",
    ]
    for name, values in cell_data.items():
        kind, fmt = ("Int64", "%d") if values.dtype.kind == "i" else ("Float64", "%.17g")
        lines += [f'<DataArray type="{kind}" Name="{name}" format="ascii">',
                  arr(values[:, None], fmt), "</DataArray>"]
    lines += ["</CellData>", "</Piece>", "</UnstructuredGrid>", "</VTKFile>"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
