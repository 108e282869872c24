import numpy as np
import pytest

from hocurve.fixtures import bullet_fixture
from hocurve.geometry import classify_boundary_nodes, project_targets
from hocurve.mesh import HighOrderMesh
from hocurve.objective import PenaltyProblem


def penalty_problem(q: int, h: float = 1.0, mu: float = 10.0, hessian_mode: str = "auto",
                    perturb: float = 0.01, seed: int = 0):
    """Penalty problem on a coarse bullet with a perturbed interior state."""
    fx = bullet_fixture(h)
    mesh = HighOrderMesh.from_linear(fx.mesh, q)
    targets = classify_boundary_nodes(mesh, fx.model, fx.classification)
    P = PenaltyProblem(mesh, targets, mu=mu, hessian_mode=hessian_mode)
    P.set_snapshot(project_targets(fx.model, targets, mesh.coords)[0])
    rng = np.random.default_rng(seed)
    x = P.x + perturb * h / q * rng.standard_normal(P.x.size)
    P.set_x(x)
    return P


@pytest.fixture(scope="session")
def bullet_coarse():
    return bullet_fixture(1.0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
