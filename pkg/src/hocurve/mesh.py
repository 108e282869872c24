"""Linear and high-order tetrahedral mesh containers."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .reference import _check_degree, build_reference

# reference gradients of the linear tet basis
_DN1 = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

# local faces of a tet, each listed so that its normal points out of the tet
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


class InvalidMeshError(ValueError):
    """Input mesh violates a structural or orientation requirement."""


def tet_volumes6(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Six times the signed volume of each tetrahedron."""
    p = points[tets]
    return np.einsum(
        "ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])
    )


@dataclass(frozen=True)
class LinearMesh:
    vertices: np.ndarray  # (nv, 3)
    tets: np.ndarray  # (ne, 4)
    triangles: np.ndarray  # (nf, 3)
    marks: np.ndarray  # (nf,)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "tets", np.asarray(self.tets, dtype=np.int64).reshape(-1, 4))
        object.__setattr__(
            self, "triangles", np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        )
        object.__setattr__(self, "marks", np.asarray(self.marks, dtype=np.int64).ravel())

    def validate(self) -> None:
        nv = len(self.vertices)
        if len(self.tets) == 0:
            raise InvalidMeshError("mesh has no tetrahedra")
        for name, arr in (("tetrahedron", self.tets), ("triangle", self.triangles)):
            if arr.size and (arr.min() < 0 or arr.max() >= nv):
                raise InvalidMeshError(f"{name} references a missing vertex")
        if len(self.marks) != len(self.triangles):
            raise InvalidMeshError("one mark per boundary triangle required")
        if self.marks.size and self.marks.min() < 0:
            raise InvalidMeshError("boundary marks must be nonnegative")
        vol = tet_volumes6(self.vertices, self.tets)
        bad = np.flatnonzero(vol <= 0)
        if bad.size:
            raise InvalidMeshError(
                f"{bad.size} tetrahedra are not positively oriented (first: {bad[0]})"
            )
        owner = face_owners(self.tets, self.triangles)
        missing = np.flatnonzero(owner[:, 0] < 0)
        if missing.size:
            raise InvalidMeshError(
                f"boundary triangle {missing[0]} is not a face of any tetrahedron"
            )
        shared = np.flatnonzero(owner[:, 2] > 1)
        if shared.size:
            raise InvalidMeshError(
                f"boundary triangle {shared[0]} is shared by two tetrahedra"
            )


def face_owners(tets: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """For each triangle: (owning tet, local face index, number of owners)."""
    table: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    for e, tet in enumerate(tets.tolist()):
        for lf, f in enumerate(TET_FACES):
            key = tuple(sorted(tet[i] for i in f))
            table.setdefault(key, []).append((e, lf))
    out = np.full((len(triangles), 3), -1, dtype=np.int64)
    for i, tri in enumerate(triangles.tolist()):
        hits = table.get(tuple(sorted(tri)), [])
        out[i, 2] = len(hits)
        if hits:
            out[i, :2] = hits[0]
    return out


def _node_key(verts, alpha):
    return tuple(sorted((v, a) for v, a in zip(verts, alpha) if a > 0))


def number_nodes(tets: np.ndarray, triangles: np.ndarray, nv: int, degree: int):
    """Global node numbering for a C0 degree-``degree`` mesh.

    Nodes are identified by their barycentric multi-index relative to the
    global vertex ids of the entity they live on, so shared edges and faces
    get identical ids in every element.  Vertex ids are preserved.

    Returns (element_nodes, face_nodes, creators) where ``creators[i]`` is the
    (element, local index) that first produced non-vertex node ``nv + i``.
    """
    ref3 = build_reference(3, degree)
    ref2 = build_reference(2, degree)
    a3 = ref3.alphas.tolist()
    a2 = ref2.alphas.tolist()
    ids: dict = {((v, degree),): v for v in range(nv)}
    creators = []
    elem_nodes = np.empty((len(tets), len(a3)), dtype=np.int64)
    for e, tet in enumerate(tets.tolist()):
        row = elem_nodes[e]
        for i, alpha in enumerate(a3):
            key = _node_key(tet, alpha)
            nid = ids.get(key)
            if nid is None:
                nid = nv + len(creators)
                ids[key] = nid
                creators.append((e, i))
            row[i] = nid
    face_nodes = np.empty((len(triangles), len(a2)), dtype=np.int64)
    for f, tri in enumerate(triangles.tolist()):
        for i, alpha in enumerate(a2):
            key = _node_key(tri, alpha)
            if key not in ids:
                raise InvalidMeshError(f"boundary triangle {f} is not a mesh face")
            face_nodes[f, i] = ids[key]
    return elem_nodes, face_nodes, np.array(creators, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class HighOrderMesh:
    """Degree-q C0 tetrahedral mesh over a fixed initial linear mesh.

    ``coords`` holds the current physical node positions (the discrete map);
    ``initial_vertices`` the straight-sided input vertices that every element
    Jacobian is measured against.
    """

    degree: int
    coords: np.ndarray
    elements: np.ndarray
    faces: np.ndarray
    face_marks: np.ndarray
    initial_vertices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_vertices(self) -> int:
        return len(self.initial_vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def characteristic_length(self) -> float:
        lo = self.initial_vertices.min(axis=0)
        hi = self.initial_vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def initial_jacobians(self) -> np.ndarray:
        """Jacobian of the straight initial element map, shape (ne, 3, 3)."""
        x = self.initial_vertices[self.elements[:, :4]]
        return np.einsum("eai,aj->eij", x, _DN1)

    @cached_property
    def initial_dets(self) -> np.ndarray:
        return np.linalg.det(self.initial_jacobians)

    @cached_property
    def initial_inverses(self) -> np.ndarray:
        dets = self.initial_dets
        if np.any(dets <= 0):
            bad = int(np.flatnonzero(dets <= 0)[0])
            raise InvalidMeshError(f"element {bad} has a degenerate initial shape")
        return np.linalg.inv(self.initial_jacobians)

    @cached_property
    def face_vertex_areas(self) -> np.ndarray:
        """Area of each boundary face of the initial linear mesh."""
        p = self.initial_vertices[self.faces[:, :3]]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.faces)

    def with_coords(self, coords: np.ndarray) -> "HighOrderMesh":
        return replace(self, coords=np.array(coords, dtype=float))

    def element_coords(self, element=None) -> np.ndarray:
        if element is None:
            return self.coords[self.elements]
        return self.coords[self.elements[element]]

    def linear_mesh(self) -> LinearMesh:
        """The straight-sided initial mesh this one is defined over."""
        return LinearMesh(
            self.initial_vertices, self.elements[:, :4], self.faces[:, :3], self.face_marks
        )

    def straight_coords(self) -> np.ndarray:
        """Node positions of the identity map (straight-sided initial elements)."""
        return HighOrderMesh.from_linear(self.linear_mesh(), self.degree).coords

    @classmethod
    def from_linear(cls, mesh: LinearMesh, degree: int = 1) -> "HighOrderMesh":
        _check_degree(degree)
        mesh.validate()
        nv = len(mesh.vertices)
        elems, faces, creators = number_nodes(mesh.tets, mesh.triangles, nv, degree)
        ref = build_reference(3, degree)
        coords = np.empty((nv + len(creators), 3))
        coords[:nv] = mesh.vertices
        if len(creators):
            lam = ref.nodes[creators[:, 1]]  # (m, 4) barycentric
            verts = mesh.vertices[mesh.tets[creators[:, 0]]]  # (m, 4, 3)
            coords[nv:] = np.einsum("ma,mai->mi", lam, verts)
        return cls(degree, coords, elems, faces, mesh.marks.copy(), mesh.vertices.copy())

    def map_points(self, element_ids, xi) -> np.ndarray:
        """Physical positions of reference points ``xi`` (n, 3) in given elements."""
        ref = build_reference(3, self.degree)
        vals, _ = ref.eval(np.asarray(xi, dtype=float))
        x = self.coords[self.elements[np.atleast_1d(element_ids)]]
        return np.einsum("pa,eai->epi", vals, x)


def elevate_degree(mesh: HighOrderMesh, to_degree: int) -> HighOrderMesh:
    """Exact degree elevation q -> q+1 of the geometric map."""
    if to_degree != mesh.degree + 1:
        raise ValueError(f"can only elevate {mesh.degree} -> {mesh.degree + 1}")
    _check_degree(to_degree)
    nv = mesh.n_vertices
    tets = mesh.elements[:, :4]
    elems, faces, creators = number_nodes(tets, mesh.faces[:, :3], nv, to_degree)
    new_ref = build_reference(3, to_degree)
    old_ref = build_reference(3, mesh.degree)
    coords = np.empty((nv + len(creators), 3))
    coords[:nv] = mesh.coords[:nv]
    if len(creators):
        vals, _ = old_ref.eval(new_ref.ref_nodes[creators[:, 1]])  # (m, n_old)
        xe = mesh.coords[mesh.elements[creators[:, 0]]]  # (m, n_old, 3)
        coords[nv:] = np.einsum("ma,mai->mi", vals, xe)
    return HighOrderMesh(
        to_degree, coords, elems, faces, mesh.face_marks.copy(), mesh.initial_vertices.copy()
    )


def element_jacobian(mesh: HighOrderMesh, element: int, ref_point) -> np.ndarray:
    """Jacobian of the map relative to the straight initial element.

    ``ref_point`` is in reference coordinates (length 3).
    """
    jac_i = mesh.initial_jacobians[element]
    det = np.linalg.det(jac_i)
    if not det > 0:
        raise InvalidMeshError(f"element {element} has a degenerate initial shape")
    ref = build_reference(3, mesh.degree)
    _, grads = ref.eval(np.asarray(ref_point, dtype=float))
    a = mesh.coords[mesh.elements[element]].T @ grads
    return a @ np.linalg.inv(jac_i)


@dataclass(frozen=True)
class BoundaryClassification:
    wall: frozenset
    symmetry: frozenset
    farfield: frozenset

    def __post_init__(self):
        for name in ("wall", "symmetry", "farfield"):
            object.__setattr__(self, name, frozenset(int(m) for m in getattr(self, name)))
        if (self.wall & self.symmetry) or (self.wall & self.farfield) or (
            self.symmetry & self.farfield
        ):
            raise ValueError("boundary classes must be pairwise disjoint")

    def role(self, mark: int) -> str:
        if mark in self.wall:
            return "wall"
        if mark in self.symmetry:
            return "symmetry"
        if mark in self.farfield:
            return "farfield"
        raise KeyError(f"boundary mark {mark} is not classified")

    def check_covers(self, marks) -> None:
        known = self.wall | self.symmetry | self.farfield
        missing = sorted(set(int(m) for m in np.unique(marks)) - known)
        if missing:
            raise ValueError(f"unclassified boundary marks: {missing}")
