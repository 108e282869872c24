"""Acceptance suite: one PASS/FAIL line per criterion.

The curving runs are shared through cached helpers; the whole module takes
about six minutes on one core.
"""
import functools
import time

import numpy as np
import pytest

from acceptance_log import record
from conftest import penalty_problem
from hocurve.accuracy import accuracy_report, normal_gradient_variation
from hocurve.distortion import element_qualities, pointwise_eta, quality_rule
from hocurve.fixtures import BULLET_MARKS, box_mesh, bullet_fixture, bullet_model
from hocurve.geometry import project_to_virtual_curve, project_to_virtual_surface
from hocurve.mesh import HighOrderMesh
from hocurve.report import histogram
from hocurve.solver import BlockSOR, SolverConfig, curve_mesh
from oracles import SurfaceOracle, central_directional, curve_oracle

pytestmark = pytest.mark.slow

RESOLUTIONS = (0.7, 0.5, 0.4)
ACCURACY_H = 0.5
JUMP_H = 0.7
BUDGET = 300.0


@functools.cache
def bullet_run(h, degree=4, jump=0.0, merged=False, continuation=True):
    fx = bullet_fixture(h, jump, merged=merged)
    cfg = SolverConfig(degree=degree, continuation=continuation)
    t = time.perf_counter()
    res = curve_mesh(fx.mesh, fx.model, fx.classification, cfg)
    return fx, res, time.perf_counter() - t


@functools.cache
def qualities(h, q):
    _, res, _ = bullet_run(h)
    mesh = res.stages[q].mesh
    t = time.perf_counter()
    eq = element_qualities(mesh, quality_rule(mesh))
    qs = np.array([e.shape_quality for e in eq])
    sj = np.array([e.scaled_jacobian for e in eq])
    return qs, sj, time.perf_counter() - t


def _case_time(res, q):
    t = res.timings
    return t.get("setup", 0.0) + sum(t[f"degree_{k}"] for k in range(2, q + 1))


def test_criterion_01_validity():
    ok, worst = True, []
    for h in RESOLUTIONS:
        _, res, _ = bullet_run(h)
        for q in (2, 3, 4):
            qs, sj, tq = qualities(h, q)
            t = _case_time(res, q) + tq
            good = res.stages[q].converged and qs.min() > 0 and sj.min() > 0 and t < BUDGET
            ok &= good
            worst.append(f"h={h} q={q}: min qS {qs.min():.3f} min qSJ {sj.min():.3f} {t:.0f}s")
    record(1, ok, "; ".join(worst))
    assert ok


def _all_runs():
    runs = [bullet_run(h) for h in RESOLUTIONS]
    runs += [bullet_run(JUMP_H, 4, j, True) for j in (7.0, 0.0)]
    runs += [bullet_run(JUMP_H, 3, continuation=c) for c in (True, False)]
    return runs


def test_criterion_02_convergence_contract():
    ok, n, worst_b, worst_g = True, 0, 0.0, 0.0
    for fx, res, _ in _all_runs():
        lc = res.mesh.characteristic_length
        for r in res.stages.values():
            if not r.converged:
                continue
            n += 1
            worst_b = max(worst_b, r.boundary_error / lc)
            worst_g = max(worst_g, r.gradient_norm)
            ok &= r.boundary_error < 1e-12 * lc and r.gradient_norm < 1e-8
        ok &= res.converged
    record(2, ok, f"{n} converged degree runs; max berr/l_c {worst_b:.2e}, max |grad| {worst_g:.2e}")
    assert ok


def test_criterion_03_accuracy_vs_degree():
    fx, res, _ = bullet_run(ACCURACY_H)
    meshes = [HighOrderMesh.from_linear(fx.mesh, 1)] + [res.stages[q].mesh for q in (2, 3, 4)]
    reps = [accuracy_report(m, fx.model, fx.classification) for m in meshes]
    ok, parts = True, []
    for name in ("sc", "d2", "dinf"):
        v = np.array([getattr(r, name) for r in reps])
        ratios = v[:-1] / v[1:]
        ok &= bool(np.all(np.diff(v) < 0))
        ok &= bool(ratios[0] >= 10 and ratios[0] == ratios.max())
        parts.append(f"{name} " + " ".join(f"{x:.2e}" for x in v)
                     + " ratios " + "/".join(f"{r:.1f}" for r in ratios))
    record(3, ok, "; ".join(parts))
    assert ok


def test_criterion_04_derivatives():
    worst = [0.0, 0.0, 0.0]
    h = 1e-6
    for seed in range(20):
        P = penalty_problem(3, seed=seed)
        x = P.x.copy()
        rng = np.random.default_rng(100 + seed)
        g = P.gradient(x)
        gn = np.linalg.norm(g)
        # along the gradient itself and along random unit directions; the error
        # is relative to |grad F| since g.v can vanish for a random v
        dirs = [g / gn] + [u / np.linalg.norm(u) for u in rng.standard_normal((3, x.size))]
        for v in dirs:
            fd = (P.value(x + h * v) - P.value(x - h * v)) / (2 * h)
            worst[0] = max(worst[0], abs(fd - g @ v) / gn)
        v, w = rng.standard_normal((2, x.size))
        hv = P.hessian_vector_product(v, x)
        worst[1] = max(worst[1], np.linalg.norm(hv - central_directional(P.gradient, x, v, h))
                       / np.linalg.norm(hv))
        hw = P.hessian_vector_product(w, x)
        worst[2] = max(worst[2], abs(hv @ w - v @ hw) / (np.linalg.norm(hv) * np.linalg.norm(w)))
    ok = worst[0] < 1e-6 and worst[1] < 1e-5 and worst[2] < 1e-10
    record(4, ok, f"20 states: gradient {worst[0]:.1e}, Hv {worst[1]:.1e}, symmetry {worst[2]:.1e}")
    assert ok


def test_criterion_05_distortion_identities():
    from scipy.spatial.transform import Rotation

    R = Rotation.random(50, random_state=5).as_matrix()
    s = np.random.default_rng(5).uniform(0.01, 100, 50)
    err_rot = np.abs(pointwise_eta(s[:, None, None] * R) - 1).max()
    err_id = abs(pointwise_eta(np.eye(3)) - 1)
    inf_ok = all(pointwise_eta(J) == np.inf for J in
                 (np.diag([-1.0, 1, 1]), np.zeros((3, 3)), np.diag([1.0, 1, 0]), -np.eye(3)))
    err_diag = abs(pointwise_eta(np.diag([2.0, 1, 1])) - 2 ** (1 / 3))
    straight = 0.0
    for lin in (box_mesh(2), bullet_fixture(1.0).mesh, bullet_fixture(0.7, 7.0).mesh):
        for q in (1, 2, 3, 4):
            m = HighOrderMesh.from_linear(lin, q)
            for e in element_qualities(m, level=4):
                straight = max(straight, abs(e.shape_quality - 1), abs(e.scaled_jacobian - 1))
    ok = max(err_rot, err_id, err_diag) < 1e-12 and inf_ok and straight < 1e-12
    record(5, ok, f"rotation {err_rot:.1e}, diag {err_diag:.1e}, det<=0 -> inf {inf_ok}, "
                  f"straight elements {straight:.1e}")
    assert ok


def _tube(rng, z, radius, n=1000):
    """Uniform points within ``radius`` of the unit circle at height z."""
    t = rng.uniform(0, 2 * np.pi, n)
    d = rng.standard_normal((n, 3))
    d *= radius * rng.uniform(0, 1, n)[:, None] ** (1 / 3) / np.linalg.norm(d, axis=1)[:, None]
    return np.column_stack([np.cos(t), np.sin(t), np.full(n, z)]) + d


def test_criterion_06_projection_oracles():
    worst, idem, n = 0.0, 0.0, 0
    for jump, merged in ((0.0, False), (7.0, True)):
        model = bullet_model(jump, merged)
        rng = np.random.default_rng(int(jump) + 11)
        p = np.column_stack([rng.uniform(-1.4, 1.4, (1000, 2)), rng.uniform(-1.9, 1.4, 1000)])
        oracles = {sid: SurfaceOracle(s.patches) for sid, s in model.surfaces.items()}
        for sid, o in oracles.items():
            got = project_to_virtual_surface(model, sid, p)
            worst = max(worst, np.linalg.norm(got - o.project(p), axis=1).max())
            idem = max(idem, np.abs(project_to_virtual_surface(model, sid, got) - got).max())
            n += 1
        # the averaged curve formula is a projection near its curve only
        for cid, c in model.curves.items():
            pc = _tube(rng, 0.0 if c.name == "junction" else -1.5, 0.8)
            got = project_to_virtual_curve(model, cid, pc)
            ref = curve_oracle(oracles[c.left], oracles[c.right], pc)
            worst = max(worst, np.linalg.norm(got - ref, axis=1).max())
            idem = max(idem, np.abs(project_to_virtual_curve(model, cid, got) - got).max())
            n += 1
    ok = worst < 1e-6 and idem < 1e-10
    record(6, ok, f"{n} surfaces/curves x 1000 queries: oracle {worst:.1e}, idempotence {idem:.1e}")
    assert ok


def test_criterion_07_preconditioner_memory():
    ratios = []
    for q in (2, 3, 4):
        P = penalty_problem(q, h=0.7)
        ratios.append(BlockSOR(P.diagonal_blocks()).nnz / P.full_hessian().nnz)
    ok = all(0.30 <= r <= 0.37 for r in ratios)
    record(7, ok, "stored/assembled nnz at q=2,3,4: " + ", ".join(f"{r:.4f}" for r in ratios))
    assert ok


def _interface_ratio(jump):
    fx, res, _ = bullet_run(JUMP_H, 4, jump, True)
    m = res.mesh
    # merged fixtures mark every sphere and cylinder triangle as "sphere"
    body = np.flatnonzero(m.face_marks == BULLET_MARKS["sphere"])
    z = m.coords[m.faces[body][:, :3]][..., 2]
    inter = (z.min(axis=1) < 0) & (z.max(axis=1) > 0)
    var = normal_gradient_variation(m, body)
    return var[inter].mean(), var[~inter].mean()


def test_criterion_08_normal_jump_spike():
    i7, s7 = _interface_ratio(7.0)
    i0, s0 = _interface_ratio(0.0)
    ok = i7 / s7 >= 10 and i0 / s0 < 10
    record(8, ok, f"h={JUMP_H} q=4 interface/smooth variation: 7 deg {i7:.2f}/{s7:.3f}="
                  f"{i7 / s7:.1f}x, 0 deg {i0:.2f}/{s0:.3f}={i0 / s0:.1f}x")
    assert ok


def test_criterion_09_continuation_benefit():
    runs = {c: bullet_run(JUMP_H, 3, continuation=c) for c in (True, False)}
    its = {c: r.trace.newton_iterations(3) for c, (_, r, _) in runs.items()}
    contract = all(
        r.converged and r.stages[3].boundary_error < 1e-12 * r.mesh.characteristic_length
        and r.stages[3].gradient_norm < 1e-8 for _, r, _ in runs.values())
    ok = its[True] <= its[False] and contract
    record(9, ok, f"h={JUMP_H} Newton iterations at q=3: with {its[True]}, without {its[False]} "
                  f"(wall time {runs[True][2]:.0f}s vs {runs[False][2]:.0f}s)")
    assert ok


def test_criterion_10_quality_histogram():
    ok, parts = True, []
    for h in RESOLUTIONS:
        for q in (2, 3):
            qs, _, _ = qualities(h, q)
            top = histogram(qs)[-1]
            ok &= top > len(qs) / 2
            parts.append(f"h={h} q={q} {top}/{len(qs)}")
    record(10, ok, "top q^S bin: " + ", ".join(parts))
    assert ok
