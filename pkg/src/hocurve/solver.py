"""Curving driver: p-continuation, penalty stages, fixed point on the
boundary targets and a Newton-Krylov inner solver."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .geometry import GeometryModel, NodeTargets, classify_boundary_nodes, project_targets
from .mesh import TET_FACES, BoundaryClassification, HighOrderMesh, LinearMesh, elevate_degree
from .objective import PenaltyProblem, solver_exactness
from .reference import MAX_DEGREE, quadrature

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


class ConfigError(ValueError):
    """Invalid solver configuration."""


@dataclass
class SolverConfig:
    degree: int = 2
    boundary_tolerance: float = 1e-12  # multiplied by the characteristic length
    gradient_tolerance: float = 1e-8
    mu0: float = 1.0
    mu_growth: float = 10.0
    predictor: bool = False
    max_stages: int = 30
    max_newton: int = 50
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    gmres_restart: int = 60
    gmres_maxiter: int = 600
    forcing_max: float = 0.1
    forcing_theta: float = 1.0
    forcing_gamma: float = 1.5
    forcing_min: float = 1e-10
    sor_omega: float = 1.0
    sor_sweeps: int = 1
    continuation: bool = True
    carry_penalty: bool = True
    freeze_problematic: bool = True
    tangency_deg: float = 5.0
    quadrature_exactness: int | None = None  # None: 2 (3q - 1)
    quality_extra: int = 4
    sample_level: int = 16
    hessian_mode: str = "auto"
    delta: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.degree <= MAX_DEGREE:
            raise ConfigError(f"degree must be in 1..{MAX_DEGREE}")
        for name in ("boundary_tolerance", "gradient_tolerance", "mu0", "armijo_c1",
                     "forcing_max", "forcing_theta", "forcing_min"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.mu_growth > 1:
            raise ConfigError("mu_growth must exceed 1")
        if not 0 < self.backtrack < 1:
            raise ConfigError("backtrack must lie in (0, 1)")
        if not 0 < self.sor_omega < 2:
            raise ConfigError("sor_omega must lie in (0, 2)")
        for name in ("max_stages", "max_newton", "max_backtracks",
                     "gmres_restart", "gmres_maxiter", "sor_sweeps", "sample_level"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.hessian_mode not in ("auto", "element", "matrix-free"):
            raise ConfigError(f"unknown hessian_mode {self.hessian_mode!r}")
        if self.quadrature_exactness is not None and self.quadrature_exactness < 1:
            raise ConfigError("quadrature_exactness must be at least 1")

    def replace(self, **kw) -> "SolverConfig":
        return dataclasses.replace(self, **kw)

    def exactness(self, degree: int) -> int:
        return self.quadrature_exactness or solver_exactness(degree)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_toml(cls, path) -> "SolverConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data.get("solver", data))


# --------------------------------------------------------------------------
# trace


@dataclass
class NewtonRecord:
    degree: int
    stage: int
    iteration: int
    mu: float
    value: float
    gradient_norm: float
    boundary_error: float
    linear_tolerance: float = math.nan
    gmres_iterations: int = 0
    step: float = 0.0
    direction: str = ""
    armijo: str = ""
    slope: float = math.nan
    next_value: float = math.nan


@dataclass
class StageRecord:
    degree: int
    stage: int
    mu: float
    newton_iterations: int
    boundary_error: float
    gradient_norm: float
    fixed_point_residual: float
    converged: bool


@dataclass
class ConvergenceTrace:
    newton: list = field(default_factory=list)
    stages: list = field(default_factory=list)

    def newton_iterations(self, degree: int | None = None) -> int:
        return sum(1 for r in self.newton if r.step > 0 and (degree is None or r.degree == degree))

    def to_dict(self) -> dict:
        return {
            "newton": [dataclasses.asdict(r) for r in self.newton],
            "stages": [dataclasses.asdict(s) for s in self.stages],
        }


# --------------------------------------------------------------------------
# linear algebra


def linear_tolerance(gnorm: float, prev_gnorm: float | None, config: SolverConfig) -> float:
    """Forcing term min(eta_max, theta (g_k / g_{k-1})^gamma), floored."""
    if prev_gnorm is None or not prev_gnorm > 0:
        return config.forcing_max
    t = config.forcing_theta * (gnorm / prev_gnorm) ** config.forcing_gamma
    return float(max(config.forcing_min, min(config.forcing_max, t)))


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    converged: bool
    stagnated: bool
    residual: float  # relative, preconditioned norm


def gmres_solve(apply_A, rhs, rel_tol: float, precond=None, restart: int = 60,
                maxiter: int = 600) -> GmresResult:
    """Restarted GMRES with left preconditioning.

    Convergence is measured on the preconditioned residual relative to the
    preconditioned right-hand side.
    """
    M = precond if precond is not None else (lambda v: v)
    n = len(rhs)
    x = np.zeros(n)
    b = M(np.asarray(rhs, dtype=float))
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        return GmresResult(x, 0, True, False, 0.0)
    target = rel_tol * bnorm
    total = 0
    resid = bnorm
    stagnated = False
    while True:
        r = b if total == 0 else M(rhs - apply_A(x))
        beta = float(np.linalg.norm(r))
        resid = beta
        if beta <= target or total >= maxiter:
            break
        m = min(restart, maxiter - total)
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for j in range(m):
            w = M(apply_A(V[j]))
            total += 1
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = H[j + 1, j] <= 1e-14 * abs(H[j, j])
            if not breakdown:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            den = math.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if den == 0 else (H[j, j] / den, H[j + 1, j] / den)
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            if abs(g[j + 1]) <= target or breakdown:
                break
        Hk = H[:k, :k]
        if np.any(np.diag(Hk) == 0):
            stagnated = True
            break
        y = np.linalg.solve(np.triu(Hk), g[:k])
        x = x + V[:k].T @ y
        new_resid = abs(g[k])
        if new_resid >= beta * (1 - 1e-10):
            stagnated = True
            resid = new_resid
            break
    converged = resid <= target
    return GmresResult(x, total, converged, stagnated and not converged, resid / bnorm)


class BlockSOR:
    """Symmetric SOR sweeps on each per-dimension diagonal block.

    Couplings between dimensions are never stored; the preconditioner keeps
    three sparse blocks.
    """

    def __init__(self, blocks, omega: float = 1.0, sweeps: int = 1):
        self.blocks = [sp.csr_matrix(b) for b in blocks]
        self.omega = omega
        self.sweeps = sweeps
        self.sizes = [b.shape[0] for b in self.blocks]
        self._fac = []
        for B in self.blocks:
            d = B.diagonal().copy()
            scale = np.max(np.abs(d)) if d.size else 1.0
            d = np.maximum(np.abs(d), 1e-12 * scale if scale > 0 else 1.0)
            L = sp.tril(B, k=-1, format="csc") + sp.diags(d / omega, format="csc")
            U = sp.triu(B, k=1, format="csc") + sp.diags(d / omega, format="csc")
            self._fac.append((B, d, _triangular_solver(L, True), _triangular_solver(U, False)))

    @property
    def nnz(self) -> int:
        return sum(b.nnz for b in self.blocks)

    def _ssor(self, k: int, r: np.ndarray) -> np.ndarray:
        B, d, lower, upper = self._fac[k]
        c = (2.0 - self.omega) / self.omega
        z = upper(c * d * lower(r))
        for _ in range(self.sweeps - 1):
            z = z + upper(c * d * lower(r - B @ z))
        return z

    def __call__(self, r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        s = 0
        for k, n in enumerate(self.sizes):
            out[s:s + n] = self._ssor(k, r[s:s + n])
            s += n
        return out


def _triangular_solver(T: sp.csc_matrix, lower: bool):
    if T.shape[0] == 0:
        return lambda v: v
    try:
        lu = spl.splu(T, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})
        return lu.solve
    except RuntimeError:  # pragma: no cover - fall back to the slower routine
        Tc = T.tocsr()
        return lambda v: spl.spsolve_triangular(Tc, v, lower=lower)


# --------------------------------------------------------------------------
# Newton


@dataclass
class NewtonResult:
    converged: bool
    iterations: int
    gradient_norm: float
    value: float
    line_search_failed: bool = False


def newton_solve(problem, config: SolverConfig, tolerance: float | None = None,
                 trace: ConvergenceTrace | None = None, context: dict | None = None,
                 preconditioner: bool = True) -> NewtonResult:
    """Newton with Armijo backtracking on a problem exposing evaluate/HVP.

    ``problem`` needs ``x``, ``set_x``, ``evaluate(x, gradient)`` returning an
    object with ``value``, ``gradient`` and ``boundary_error``,
    ``hessian_vector_product(v)`` and (optionally) ``diagonal_blocks()``.
    """
    tol = config.gradient_tolerance if tolerance is None else tolerance
    ctx = dict(degree=0, stage=0, mu=getattr(problem, "mu", math.nan))
    ctx.update(context or {})
    x = problem.x
    ev = problem.evaluate(x, gradient=True)
    if not math.isfinite(ev.value) or ev.gradient is None:
        raise FloatingPointError("initial state has an inverted quadrature point")
    prev_gn = None
    it = 0
    failed = False
    while True:
        g = ev.gradient
        gn = float(np.max(np.abs(g))) if g.size else 0.0
        rec = NewtonRecord(iteration=it, value=ev.value, gradient_norm=gn,
                           boundary_error=ev.boundary_error, **ctx)
        if trace is not None:
            trace.newton.append(rec)
        if gn < tol or it >= config.max_newton:
            break
        rel = linear_tolerance(gn, prev_gn, config)
        prev_gn = gn
        problem.set_x(x)
        P = None
        if preconditioner and hasattr(problem, "diagonal_blocks"):
            P = BlockSOR(problem.diagonal_blocks(), config.sor_omega, config.sor_sweeps)
        res = gmres_solve(problem.hessian_vector_product, -g, rel, P,
                          config.gmres_restart, config.gmres_maxiter)
        d = res.x
        slope = float(g @ d)
        direction = "newton"
        if res.stagnated or not (slope < 0) or not np.all(np.isfinite(d)):
            d = -(P(g) if P is not None else g)
            slope = float(g @ d)
            direction = "preconditioned-gradient"
            if not slope < 0:
                d, slope, direction = -g, -float(g @ g), "gradient"
        rec.linear_tolerance, rec.gmres_iterations = rel, res.iterations
        rec.direction, rec.slope = direction, slope
        # backtracking; decreases below the rounding level of F are accepted
        # when F does not grow beyond that level
        noise = 16.0 * EPS * max(abs(ev.value), 1e-300)
        alpha = 1.0
        accepted = None
        for _ in range(config.max_backtracks + 1):
            trial = x + alpha * d
            fv = problem.evaluate(trial, gradient=False).value
            if math.isfinite(fv):
                if fv <= ev.value + config.armijo_c1 * alpha * slope:
                    accepted = "strict"
                    break
                if -config.armijo_c1 * alpha * slope <= noise and fv <= ev.value + noise:
                    accepted = "rounding"
                    break
            alpha *= config.backtrack
        if accepted is None:
            failed = True
            rec.armijo = "failed"
            log.warning("line search failed after %d halvings", config.max_backtracks)
            break
        rec.step, rec.armijo = alpha, accepted
        x = trial
        problem.set_x(x)
        ev = problem.evaluate(x, gradient=True)
        rec.next_value = ev.value
        it += 1
    return NewtonResult(gn < tol, it, gn, ev.value, failed)


# --------------------------------------------------------------------------
# problematic configurations


@dataclass
class ProblematicConfigurations:
    multi_curve_triangles: list  # (a)
    multi_wall_tets: list  # (b): (tet, [faces])
    tangent_triangles: list  # (c): (face, angle in degrees)
    frozen_faces: list

    @property
    def empty(self) -> bool:
        return not (self.multi_curve_triangles or self.multi_wall_tets or self.tangent_triangles)

    def to_dict(self) -> dict:
        return {
            "multi_curve_triangles": [int(f) for f in self.multi_curve_triangles],
            "multi_wall_tets": [[int(t), [int(f) for f in fs]] for t, fs in self.multi_wall_tets],
            "tangent_triangles": [[int(f), float(a)] for f, a in self.tangent_triangles],
            "frozen_faces": [int(f) for f in self.frozen_faces],
        }


def detect_problematic_configurations(
    mesh: HighOrderMesh, model: GeometryModel, classification: BoundaryClassification,
    tangency_deg: float = 5.0,
) -> ProblematicConfigurations:
    """Boundary configurations the projection boundary condition handles badly.

    (a) triangles with two or more edges on virtual curves, (b) tets with two
    or more faces on walls, (c) triangles of (a) whose curve edges meet at an
    angle below ``tangency_deg``.  Frozen: (c), and the wall faces of (b)
    tets whose faces are nearly tangent.
    """
    tri = mesh.faces[:, :3]
    x = mesh.initial_vertices
    surf = np.full(len(tri), -1, dtype=np.int64)
    for f, mark in enumerate(mesh.face_marks.tolist()):
        if classification.role(mark) != "farfield":
            surf[f] = model.surface_for_mark(mark)
    edge_surfs: dict = {}
    for f, t in enumerate(tri.tolist()):
        if surf[f] < 0:
            continue
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edge_surfs.setdefault((min(a, b), max(a, b)), set()).add(int(surf[f]))
    curve_edges = {e for e, s in edge_surfs.items()
                   if len(s) == 2 and model.curve_between(*sorted(s)) is not None}
    multi_curve, tangent, frozen = [], [], set()
    for f, t in enumerate(tri.tolist()):
        if surf[f] < 0:
            continue
        edges = [(t[i], t[(i + 1) % 3]) for i in range(3)]
        on_curve = [e for e in edges if (min(e), max(e)) in curve_edges]
        if len(on_curve) < 2:
            continue
        multi_curve.append(f)
        (a0, a1), (b0, b1) = on_curve[:2]
        shared = ({a0, a1} & {b0, b1}).pop()
        u = x[a1 if a0 == shared else a0] - x[shared]
        v = x[b1 if b0 == shared else b0] - x[shared]
        ang = math.degrees(math.acos(np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)),
                                             -1, 1)))
        if ang < tangency_deg:
            tangent.append((f, ang))
            frozen.add(f)
    # tets owning several wall faces
    face_key = {tuple(sorted(t)): f for f, t in enumerate(tri.tolist()) if surf[f] >= 0}
    multi_wall = []
    for e, tet in enumerate(mesh.elements[:, :4].tolist()):
        fs = [face_key[k] for lf in TET_FACES
              if (k := tuple(sorted(tet[i] for i in lf))) in face_key]
        if len(fs) >= 2:
            multi_wall.append((e, fs))
            n = [np.cross(x[tri[f][1]] - x[tri[f][0]], x[tri[f][2]] - x[tri[f][0]]) for f in fs]
            n = [v / np.linalg.norm(v) for v in n]
            if any(n[i] @ n[j] > math.cos(math.radians(tangency_deg))
                   for i in range(len(n)) for j in range(i + 1, len(n))):
                frozen.update(fs)
    return ProblematicConfigurations(multi_curve, multi_wall, tangent, sorted(frozen))


# --------------------------------------------------------------------------
# penalty loop and p-continuation


def build_dirichlet_snapshot(coords: np.ndarray, model: GeometryModel, targets: NodeTargets):
    """Targets: projections for surface/curve nodes, current positions otherwise.

    Returns (snapshot, low-precision node list).
    """
    return project_targets(model, targets, coords)


@dataclass
class PenaltyResult:
    mesh: HighOrderMesh
    converged: bool
    mu: float
    stages: int
    boundary_error: float
    gradient_norm: float
    fixed_point_residual: float
    newton_iterations: int
    energy: float
    warnings: list = field(default_factory=list)


def _predict_mu(mu: float, err: float, target: float, config: SolverConfig) -> float:
    if not config.predictor or not target > 0:
        return mu * config.mu_growth
    return float(np.clip(mu * err / target, config.mu_growth * mu, 1e6 * mu))


def penalty_loop(mesh: HighOrderMesh, model: GeometryModel, targets: NodeTargets,
                 config: SolverConfig, trace: ConvergenceTrace | None = None,
                 mu0: float | None = None) -> PenaltyResult:
    """Increase mu until the boundary error and the gradient meet their tolerances.

    Each stage refreshes the boundary targets from the current mesh (one
    fixed-point step), minimizes F_mu with those targets frozen, and then
    measures the boundary error against fresh projections.  The gradient
    criterion applies to the minimization just performed; the gradient
    against the fresh targets is recorded as the fixed-point residual.
    """
    trace = trace if trace is not None else ConvergenceTrace()
    degree = mesh.degree
    rule = quadrature(3, config.exactness(degree))
    problem = PenaltyProblem(mesh, targets, mu=mu0 or config.mu0, rule=rule,
                             delta=config.delta, hessian_mode=config.hessian_mode)
    eps_b = config.boundary_tolerance * mesh.characteristic_length
    omega = config.gradient_tolerance
    mu = problem.mu
    warnings: list = []
    newton_total = 0
    converged = False
    berr = gn = fp_res = math.inf
    stage = 0
    snap, low = build_dirichlet_snapshot(problem.coords, model, targets)
    for stage in range(config.max_stages):
        problem.mu = mu
        if low:
            warnings.append(f"degree {degree} stage {stage}: {len(low)} low-precision projections")
        problem.set_snapshot(snap)
        res = newton_solve(problem, config, omega, trace,
                           dict(degree=degree, stage=stage, mu=mu))
        newton_total += res.iterations
        gn = res.gradient_norm
        if res.line_search_failed:
            warnings.append(f"degree {degree} stage {stage}: line search failed")
        # fresh targets: boundary error and fixed-point residual
        snap, low = build_dirichlet_snapshot(problem.coords, model, targets)
        problem.set_snapshot(snap)
        ev = problem.evaluate()
        berr = ev.boundary_error
        fp_res = float(np.max(np.abs(ev.gradient))) if ev.gradient is not None and \
            ev.gradient.size else 0.0
        converged = res.converged and berr < eps_b
        trace.stages.append(StageRecord(degree, stage, mu, res.iterations, berr, gn, fp_res,
                                        converged))
        log.info("q=%d stage %d mu=%.3g berr=%.3e |g|=%.3e fp=%.3e newton=%d", degree, stage,
                 mu, berr, gn, fp_res, res.iterations)
        if converged:
            break
        if berr >= eps_b:
            mu = _predict_mu(mu, berr, eps_b, config)
    final = problem.current_mesh()
    energy = problem.energy() / problem.volume
    return PenaltyResult(final, converged, mu, stage + 1, berr, gn, fp_res, newton_total,
                         energy, warnings)


@dataclass
class CurvingResult:
    mesh: HighOrderMesh
    converged: bool
    trace: ConvergenceTrace
    stages: dict  # degree -> PenaltyResult
    problematic: ProblematicConfigurations
    targets: NodeTargets
    timings: dict


def curve_mesh(linear_mesh: LinearMesh, model: GeometryModel,
               classification: BoundaryClassification, config: SolverConfig) -> CurvingResult:
    """Curve a linear mesh to ``config.degree``, through every lower degree
    when continuation is on."""
    t_start = time.perf_counter()
    linear_mesh.validate()
    classification.check_covers(linear_mesh.marks)
    for mark in np.unique(linear_mesh.marks).tolist():
        if classification.role(mark) != "farfield":
            model.surface_for_mark(mark)
    timings: dict = {}
    m1 = HighOrderMesh.from_linear(linear_mesh, 1)
    t0 = time.perf_counter()
    problematic = detect_problematic_configurations(m1, model, classification,
                                                    config.tangency_deg)
    frozen = problematic.frozen_faces if config.freeze_problematic else []
    timings["setup"] = time.perf_counter() - t0
    trace = ConvergenceTrace()
    stages: dict = {}
    target = config.degree
    degrees = list(range(2, target + 1)) if config.continuation else [target]
    mesh = m1
    targets = classify_boundary_nodes(m1, model, classification, frozen)
    converged = True
    if target == 1:
        degrees = []
    for q in degrees:
        t0 = time.perf_counter()
        if mesh.degree == q - 1:
            mesh = elevate_degree(mesh, q)
        else:
            mesh = HighOrderMesh.from_linear(linear_mesh, q)
        targets = classify_boundary_nodes(mesh, model, classification, frozen)
        mu0 = None
        if config.carry_penalty and q - 1 in stages:
            mu0 = stages[q - 1].mu
        res = penalty_loop(mesh, model, targets, config, trace, mu0=mu0)
        stages[q] = res
        mesh = res.mesh
        converged = res.converged
        timings[f"degree_{q}"] = time.perf_counter() - t0
        if not converged:
            log.warning("degree %d did not converge; stopping continuation", q)
            break
    timings["total"] = time.perf_counter() - t_start
    return CurvingResult(mesh, converged, trace, stages, problematic, targets, timings)
