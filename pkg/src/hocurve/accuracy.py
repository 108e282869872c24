"""Geometric accuracy of the curved wall boundary: SC, d2 and d_inf."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryModel
from .mesh import BoundaryClassification, HighOrderMesh
from .reference import build_reference, lattice_points, quadrature


@dataclass
class AccuracyReport:
    sc: float
    d2: float
    dinf: float
    length: float  # characteristic length used for the normalized values
    area: float
    dinf_face: int
    dinf_point: tuple  # reference coordinates on the maximizing face
    dinf_location: tuple  # physical coordinates
    per_surface: dict = field(default_factory=dict)
    n_faces: int = 0
    samples_per_face: int = 0

    @property
    def sc_rel(self) -> float:
        return self.sc / self.length

    @property
    def d2_rel(self) -> float:
        return self.d2 / self.length

    @property
    def dinf_rel(self) -> float:
        return self.dinf / self.length

    def rows(self) -> list[tuple[str, float]]:
        """Accuracy table rows in display order."""
        return [
            ("SC", self.sc), ("SC/l_c", self.sc_rel),
            ("d_2", self.d2), ("d_2/l_c", self.d2_rel),
            ("d_inf", self.dinf), ("d_inf/l_c", self.dinf_rel),
        ]

    def to_dict(self) -> dict:
        return {
            "sc": self.sc, "d2": self.d2, "dinf": self.dinf,
            "sc_rel": self.sc_rel, "d2_rel": self.d2_rel, "dinf_rel": self.dinf_rel,
            "length": self.length, "area": self.area,
            "dinf_face": self.dinf_face, "dinf_point": list(self.dinf_point),
            "dinf_location": list(self.dinf_location),
            "per_surface": {str(k): v for k, v in self.per_surface.items()},
            "n_faces": self.n_faces, "samples_per_face": self.samples_per_face,
        }


def wall_faces(mesh: HighOrderMesh, model: GeometryModel,
               classification: BoundaryClassification) -> dict:
    """Wall faces grouped by their virtual surface id."""
    groups: dict = {}
    for f, mark in enumerate(mesh.face_marks.tolist()):
        if classification.role(mark) == "wall":
            groups.setdefault(model.surface_for_mark(mark), []).append(f)
    return {s: np.array(v, dtype=np.int64) for s, v in sorted(groups.items())}


def accuracy_rule_degree(degree: int) -> int:
    return 2 * degree + 8


def _face_map(mesh: HighOrderMesh, faces: np.ndarray, xi: np.ndarray):
    """Positions and area elements of reference points on the given faces."""
    ref = build_reference(2, mesh.degree)
    vals, grads = ref.eval(xi)
    X = mesh.coords[mesh.faces[faces]]  # (f, nb, 3)
    pos = np.einsum("pa,fai->fpi", vals, X)
    t1 = np.einsum("pa,fai->fpi", grads[..., 0], X)
    t2 = np.einsum("pa,fai->fpi", grads[..., 1], X)
    jac = np.linalg.norm(np.cross(t1, t2), axis=-1)
    return pos, jac


def dinf_samples(degree: int, level: int = 16, rule_degree: int | None = None) -> np.ndarray:
    """Reference sample set: quadrature points, face nodes and a level lattice."""
    rule = quadrature(2, rule_degree or accuracy_rule_degree(degree))
    return np.vstack([rule.points, build_reference(2, degree).ref_nodes,
                      lattice_points(2, level)])


def accuracy_report(mesh: HighOrderMesh, model: GeometryModel,
                    classification: BoundaryClassification, level: int = 16,
                    rule_degree: int | None = None) -> AccuracyReport:
    """SC, d2 and d_inf of the wall faces, each against its own virtual surface."""
    classification.check_covers(mesh.face_marks)
    rule = quadrature(2, rule_degree or accuracy_rule_degree(mesh.degree))
    samples = dinf_samples(mesh.degree, level, rule.degree)
    nq = len(rule)
    w = rule.weights
    tot_a = tot_d = tot_d2 = 0.0
    best = (-1.0, -1, -1, None)
    per_surface = {}
    groups = wall_faces(mesh, model, classification)
    for sid, faces in groups.items():
        surf = model.surface(sid)
        pos, jac = _face_map(mesh, faces, samples)
        proj, _ = surf.project(pos.reshape(-1, 3))
        dist = np.linalg.norm(pos.reshape(-1, 3) - proj, axis=1).reshape(pos.shape[:2])
        wa = w[None, :] * jac[:, :nq]
        a = float(wa.sum())
        s1 = float(np.sum(wa * dist[:, :nq]))
        s2 = float(np.sum(wa * dist[:, :nq] ** 2))
        k = int(np.argmax(dist))
        fi, pi = divmod(k, dist.shape[1])
        dmax = float(dist[fi, pi])
        per_surface[int(sid)] = {"sc": s1 / a, "d2": float(np.sqrt(s2 / a)), "dinf": dmax,
                                 "area": a, "faces": int(len(faces))}
        tot_a += a
        tot_d += s1
        tot_d2 += s2
        if dmax > best[0]:
            best = (dmax, int(faces[fi]), pi, pos[fi, pi])
    if tot_a == 0:
        raise ValueError("no wall faces to measure")
    dmax, face, pi, loc = best
    return AccuracyReport(
        sc=tot_d / tot_a, d2=float(np.sqrt(tot_d2 / tot_a)), dinf=dmax,
        length=mesh.characteristic_length, area=tot_a, dinf_face=face,
        dinf_point=tuple(float(v) for v in samples[pi]),
        dinf_location=tuple(float(v) for v in loc), per_surface=per_surface,
        n_faces=int(sum(len(f) for f in groups.values())), samples_per_face=len(samples),
    )


def sc_measure(mesh, model, classification) -> float:
    return accuracy_report(mesh, model, classification).sc


def d2_measure(mesh, model, classification) -> float:
    return accuracy_report(mesh, model, classification).d2


def dinf_measure(mesh, model, classification, level: int = 16):
    r = accuracy_report(mesh, model, classification, level)
    return r.dinf, (r.dinf_face, r.dinf_point)


# --------------------------------------------------------------------------
# boundary smoothness


def normal_gradient_z(mesh: HighOrderMesh, faces: np.ndarray, xi: np.ndarray,
                      step: float = 1e-5) -> np.ndarray:
    """Derivative of the z component of the unit normal along z on curved faces.

    Computes (grad_s n_z) . e_z, with grad_s the surface gradient, at the
    reference points ``xi`` of every face; shape (faces, points).
    """
    ref = build_reference(2, mesh.degree)
    X = mesh.coords[mesh.faces[faces]]

    def frame(p):
        _, g = ref.eval(p)
        t1 = np.einsum("pa,fai->fpi", g[..., 0], X)
        t2 = np.einsum("pa,fai->fpi", g[..., 1], X)
        n = np.cross(t1, t2)
        return t1, t2, n / np.linalg.norm(n, axis=-1, keepdims=True)

    t1, t2, _ = frame(xi)
    dn = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        dn.append((frame(xi + e)[2][..., 2] - frame(xi - e)[2][..., 2]) / (2 * step))
    # metric tensor and its inverse; grad_s f = g^{ab} d_a f t_b
    g11 = np.einsum("fpi,fpi->fp", t1, t1)
    g12 = np.einsum("fpi,fpi->fp", t1, t2)
    g22 = np.einsum("fpi,fpi->fp", t2, t2)
    det = g11 * g22 - g12 * g12
    c1 = (g22 * dn[0] - g12 * dn[1]) / det
    c2 = (-g12 * dn[0] + g11 * dn[1]) / det
    return c1 * t1[..., 2] + c2 * t2[..., 2]


def normal_gradient_variation(mesh: HighOrderMesh, faces: np.ndarray, level: int = 8):
    """Per-face range (max - min) of the normal-gradient field over a lattice."""
    xi = lattice_points(2, level)
    field_ = normal_gradient_z(mesh, faces, xi)
    return field_.max(axis=1) - field_.min(axis=1)
