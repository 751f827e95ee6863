"""Shared fixtures and generators for the test suite."""
import numpy as np
import pytest

from limitql import bench
from limitql.mesh import DomainSpec, build_initial, extract_conforming, structured_quads


def random_convex_polygon(rng, n):
    """Counter-clockwise convex polygon with ``n`` well-separated vertices.

    Angles are jittered around a regular ``n``-gon and the result is pushed
    through a random affine map with positive determinant.
    """
    base = 2.0 * np.pi * np.arange(n) / n
    ang = base + rng.uniform(-0.3, 0.3, size=n) * (2.0 * np.pi / n)
    pts = np.column_stack([np.cos(ang), np.sin(ang)])
    M = np.array([[rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5)],
                  [rng.uniform(-0.5, 0.5), rng.uniform(0.5, 2.0)]])
    if np.linalg.det(M) < 0:
        M[:, 0] *= -1.0
    return pts @ M.T + rng.uniform(-3.0, 3.0, size=2)


def grid_domain(nx, ny, lx=1.0, ly=1.0):
    nodes, quads, sides = structured_quads(np.linspace(0.0, lx, nx + 1), np.linspace(0.0, ly, ny + 1))
    return DomainSpec(nodes, quads, dict(sides))


def random_hanging_mesh(rng, passes=4, frac=0.3, domain=None):
    """Conforming mesh of a randomly refined quadtree (hanging nodes included)."""
    forest = build_initial(domain or grid_domain(3, 2, 1.5, 1.0))
    for _ in range(passes):
        leaves = forest.leaves()
        k = max(1, int(frac * len(leaves)))
        forest.refine(rng.choice(leaves, size=k, replace=False))
    return forest, extract_conforming(forest)


def linear_field(mesh, G, a=(0.0, 0.0)):
    """Velocity vector of ``u(x) = a + G x`` with zero bubble coefficients."""
    d = np.zeros(mesh.n_dofs)
    u = mesh.nodes @ np.asarray(G, dtype=float).T + np.asarray(a, dtype=float)
    d[0:2 * mesh.n_nodes:2] = u[:, 0]
    d[1:2 * mesh.n_nodes:2] = u[:, 1]
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def footing0():
    return bench.footing(0.0)


ACCEPTANCE_LINES = []


def report_criterion(number, title, passed, detail):
    """Record one acceptance line; all lines are echoed in the terminal summary."""
    line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
