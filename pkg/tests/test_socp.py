"""Interior-point SOCP solver: oracles, infeasibility, presolve, determinism."""
import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog, minimize_scalar

from limitql import socp
from limitql.socp import ConeSpec, ConicProgram, SolveOptions, presolve, solve

REL_TOL = 1e-7
# presolve comparisons need solves well below the 1e-10 agreement they check
TIGHT = SolveOptions(feas_tol=1e-10, gap_tol=1e-10)


def _cone_point(rng, d):
    t = rng.normal(size=d)
    t[0] = np.linalg.norm(t[1:]) + rng.uniform(0.1, 1.0)
    return t


def random_feasible(rng, nf, dims, p):
    """Random primal and dual strictly feasible SOCP with full row rank."""
    n = nf + sum(dims)
    p = min(p, n)
    while True:
        A = rng.normal(size=(p, n)) * (rng.uniform(size=(p, n)) < 0.7)
        if np.linalg.matrix_rank(A) == p:
            break
    x0 = np.concatenate([rng.normal(size=nf)] + [_cone_point(rng, d) for d in dims])
    s0 = np.concatenate([np.zeros(nf)] + [_cone_point(rng, d) for d in dims])
    y0 = rng.normal(size=p)
    return ConicProgram(c=A.T @ y0 + s0, A=sp.csr_matrix(A), b=A @ x0, cones=ConeSpec(nf, tuple(dims)))


def clarabel_value(prog):
    cp = pytest.importorskip("cvxpy")
    x = cp.Variable(prog.n_var)
    cons = [prog.A @ x == prog.b]
    off = prog.cones.n_free
    for d in prog.cones.quad_cones:
        cons.append(cp.SOC(x[off], x[off + 1:off + d]))
        off += d
    pr = cp.Problem(cp.Minimize(prog.c @ x), cons)
    pr.solve(solver="CLARABEL", tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    if pr.status != "optimal":
        # the tight request can stall on round-off; the defaults are still well below 1e-7
        pr = cp.Problem(cp.Minimize(prog.c @ x), cons)
        pr.solve(solver="CLARABEL")
    assert pr.status == "optimal"
    return pr.value


def brute_force_q3(c, a, beta):
    """min c.x over x in Q3 with a.x = beta, by a 1-D search along the cone boundary.

    With ``c`` interior to the dual cone and ``a0 > |(a1, a2)|`` the optimum
    is ``x = t (1, cos w, sin w)`` with ``t = beta / (a . (1, cos w, sin w))``.
    """
    def f(w):
        u = np.array([1.0, np.cos(w), np.sin(w)])
        return beta * (c @ u) / (a @ u)

    grid = np.linspace(-np.pi, np.pi, 4001)
    w0 = grid[np.argmin([f(w) for w in grid])]
    h = grid[1] - grid[0]
    res = minimize_scalar(f, bounds=(w0 - h, w0 + h), method="bounded", options={"xatol": 1e-13})
    return min(res.fun, f(w0))


def _rel_err(a, b):
    return abs(a - b) / max(1.0, abs(b))


def _cone_margin(x, cones):
    off = cones.n_free
    worst = np.inf
    for d in cones.quad_cones:
        worst = min(worst, x[off] - np.linalg.norm(x[off + 1:off + d]))
        off += d
    return worst


class TestExamples:
    def test_norm_of_3_4(self):
        P = ConicProgram(np.array([1.0, 0, 0]), sp.csr_matrix([[0.0, 1, 0], [0, 0, 1]]),
                         np.array([3.0, 4.0]), ConeSpec(0, (3,)))
        r = solve(P)
        assert r.status == socp.OPTIMAL
        assert r.primal_objective == pytest.approx(5.0, rel=1e-9)

    def test_zero_norm(self):
        P = ConicProgram(np.array([1.0, 0]), sp.csr_matrix([[0.0, 1]]), np.array([0.0]), ConeSpec(0, (2,)))
        r = solve(P)
        assert r.status == socp.OPTIMAL
        assert r.primal_objective == pytest.approx(0.0, abs=1e-8)

    def test_nan_input_rejected(self):
        P = ConicProgram(np.array([np.nan, 0, 0]), sp.csr_matrix([[0.0, 1, 0]]), np.array([1.0]),
                         ConeSpec(0, (3,)))
        with pytest.raises(ValueError):
            solve(P)

    def test_structurally_rank_deficient(self):
        # two rows touching a single column
        A = sp.csr_matrix([[0.0, 1, 0, 0], [0, 2, 0, 0], [0, 0, 1, 1]])
        P = ConicProgram(np.array([1.0, 0, 0, 0]), A, np.array([1.0, 3.0, 1.0]), ConeSpec(0, (4,)))
        r = solve(P, presolve=False)
        assert r.status == socp.NUMERICAL
        assert "rank" in r.message


class TestRandomSuite:
    """200 random feasible SOCPs against independent oracles."""

    def test_reference_solver_oracle(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(120):
            dims = tuple(int(d) for d in rng.integers(2, 6, size=rng.integers(1, 6)))
            P = random_feasible(rng, int(rng.integers(0, 4)), dims, int(rng.integers(1, 8)))
            r = solve(P)
            assert r.status == socp.OPTIMAL
            worst = max(worst, _rel_err(r.primal_objective, clarabel_value(P)))
            assert _cone_margin(r.x, P.cones) >= -1e-8
            assert np.linalg.norm(P.A @ r.x - P.b) / (1 + np.linalg.norm(P.b)) <= 1e-8
        assert worst <= REL_TOL

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(40):
            u = rng.normal(size=2)
            c = np.concatenate([[1.0], rng.uniform(0.0, 0.9) * u / np.linalg.norm(u)])
            v = rng.normal(size=2)
            a = np.concatenate([[1.0], rng.uniform(0.0, 0.9) * v / np.linalg.norm(v)]) * rng.uniform(0.5, 3)
            beta = rng.uniform(0.5, 5.0)
            P = ConicProgram(c, sp.csr_matrix(a[None, :]), np.array([beta]), ConeSpec(0, (3,)))
            r = solve(P)
            assert r.status == socp.OPTIMAL
            worst = max(worst, _rel_err(r.primal_objective, brute_force_q3(c, a, beta)))
        assert worst <= REL_TOL

    def test_analytic_norm_family(self):
        rng = np.random.default_rng(13)
        worst = 0.0
        for _ in range(40):
            k = int(rng.integers(1, 4))
            dims = [int(d) for d in rng.integers(2, 7, size=k)]
            w = rng.uniform(0.1, 10.0, size=k)
            vs = [rng.normal(size=d - 1) * 10.0 ** rng.uniform(-2, 2) for d in dims]
            n = sum(dims)
            rows, b, c = [], [], np.zeros(n)
            off = 0
            for d, v, wi in zip(dims, vs, w):
                c[off] = wi
                for i in range(d - 1):
                    row = np.zeros(n)
                    row[off + 1 + i] = 1.0
                    rows.append(row)
                    b.append(v[i])
                off += d
            P = ConicProgram(c, sp.csr_matrix(np.array(rows)), np.array(b), ConeSpec(0, tuple(dims)))
            r = solve(P)
            exact = sum(wi * np.linalg.norm(v) for wi, v in zip(w, vs))
            assert r.status == socp.OPTIMAL
            worst = max(worst, _rel_err(r.primal_objective, exact))
        assert worst <= REL_TOL


class TestLinearPrograms:
    def test_two_dimensional_cones_match_linprog(self):
        # (t, u) in Q2 means t >= |u|; min c.x s.t. Ax = b is then an LP in (t, u)
        rng = np.random.default_rng(14)
        for _ in range(50):
            P = random_feasible(rng, 0, (2,) * int(rng.integers(2, 6)), int(rng.integers(1, 5)))
            n = P.n_var
            # t - u >= 0 and t + u >= 0
            G = np.zeros((n, n))
            for j in range(0, n, 2):
                G[j, j], G[j, j + 1] = -1.0, 1.0
                G[j + 1, j], G[j + 1, j + 1] = -1.0, -1.0
            lp = linprog(P.c, A_ub=G, b_ub=np.zeros(n), A_eq=P.A.toarray(), b_eq=P.b,
                         bounds=[(None, None)] * n, method="highs")
            assert lp.status == 0
            r = solve(P)
            assert r.primal_objective == pytest.approx(lp.fun, rel=1e-8, abs=1e-8)


class TestInfeasibility:
    def test_negative_apex(self):
        P = ConicProgram(np.array([1.0, 0, 0]), sp.csr_matrix([[1.0, 0, 0]]), np.array([-1.0]), ConeSpec(0, (3,)))
        assert solve(P).status == socp.PRIMAL_INFEASIBLE

    def test_norm_exceeds_bound(self):
        P = ConicProgram(np.array([1.0, 0, 0]), sp.csr_matrix(np.eye(3)), np.array([2.0, 3, 4]), ConeSpec(0, (3,)))
        assert solve(P).status == socp.PRIMAL_INFEASIBLE

    def test_inconsistent_rows_short_circuit(self):
        A = sp.csr_matrix([[1.0, 0, 0], [0, 0, 0]])
        P = ConicProgram(np.array([1.0, 0, 0]), A, np.array([1.0, 2.0]), ConeSpec(1, (2,)))
        r = solve(P)
        assert r.status == socp.PRIMAL_INFEASIBLE and r.iterations == 0

    def test_random_infeasible(self):
        # a.x = -1 with a in the interior of the dual cone cannot hold for x in the cone
        rng = np.random.default_rng(15)
        for _ in range(10):
            dims = tuple(int(d) for d in rng.integers(2, 5, size=3))
            a = np.concatenate([_cone_point(rng, d) for d in dims])
            P = ConicProgram(rng.normal(size=len(a)), sp.csr_matrix(a[None, :]), np.array([-1.0]),
                             ConeSpec(0, dims))
            assert solve(P).status == socp.PRIMAL_INFEASIBLE

    def test_unbounded(self):
        P = ConicProgram(np.array([-1.0, 0]), sp.csr_matrix([[0.0, 1]]), np.array([1.0]), ConeSpec(0, (2,)))
        assert solve(P).status == socp.DUAL_INFEASIBLE

    def test_unbounded_free_variable(self):
        P = ConicProgram(np.array([1.0, 0, 0]), sp.csr_matrix([[1.0, 1, 0]]), np.array([1.0]), ConeSpec(1, (2,)))
        assert solve(P).status == socp.DUAL_INFEASIBLE


class TestPresolve:
    def test_duplicate_row_removed(self, rng):
        P = random_feasible(rng, 1, (3, 3), 3)
        A = sp.vstack([P.A, P.A[1]]).tocsr()
        Q = ConicProgram(P.c, A, np.append(P.b, P.b[1]), P.cones)
        pre = presolve(Q)
        assert pre.program.A.shape[0] == 3
        assert solve(Q).primal_objective == pytest.approx(solve(P).primal_objective, rel=1e-10)

    def test_variable_fixed_by_two_rows(self, rng):
        P = random_feasible(rng, 2, (3, 4), 3)
        x0 = solve(P).x
        n = P.n_var
        e = np.zeros((2, n))
        e[:, 0] = 1.0
        Q = ConicProgram(P.c, sp.vstack([P.A, sp.csr_matrix(e)]).tocsr(),
                         np.append(P.b, [x0[0], x0[0]]), P.cones)
        pre = presolve(Q)
        assert pre.program.n_var == n - 1
        r = solve(Q)
        assert r.x[0] == x0[0]
        assert r.primal_objective == pytest.approx(solve(P).primal_objective, rel=1e-9)

    def test_row_scaling_preserves_optimum(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            P = random_feasible(rng, int(rng.integers(0, 3)), (3, 3, 4), 4)
            D = 10.0 ** rng.uniform(-3, 3, size=P.A.shape[0])
            Q = ConicProgram(P.c, sp.diags(D) @ P.A, D * P.b, P.cones)
            assert _rel_err(solve(Q, TIGHT).primal_objective, solve(P, TIGHT).primal_objective) <= 1e-10

    def test_presolve_toggle_same_optimum(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            P = random_feasible(rng, 1, (3, 4), 3)
            a = solve(P, TIGHT).primal_objective
            b = solve(P, TIGHT, presolve=False).primal_objective
            assert _rel_err(a, b) <= 1e-10


class TestSolverContract:
    def test_reproducible_bit_for_bit(self):
        P = random_feasible(np.random.default_rng(18), 2, (3, 3, 5), 5)
        r1, r2 = solve(P), solve(P)
        assert r1.iterations == r2.iterations
        assert r1.primal_objective == r2.primal_objective
        assert r1.x.tobytes() == r2.x.tobytes()

    def test_optimal_report_invariants(self):
        rng = np.random.default_rng(19)
        opts = SolveOptions()
        for _ in range(20):
            P = random_feasible(rng, 1, (3, 3, 3), 4)
            r = solve(P, opts)
            assert r.status == socp.OPTIMAL
            assert r.rel_gap <= opts.gap_tol
            assert r.primal_residual <= opts.feas_tol
            assert r.cone_violation <= opts.feas_tol
            assert r.primal_objective >= r.dual_objective - 1e-9 * (1 + abs(r.primal_objective))

    def test_history_records_every_iteration(self):
        P = random_feasible(np.random.default_rng(20), 0, (3, 3), 2)
        r = solve(P)
        # entry 0 is the starting point
        assert len(r.history) == r.iterations + 1
        assert {"mu", "pcost", "dcost", "gap"} <= set(r.history[0])

    def test_max_iter_status(self):
        P = random_feasible(np.random.default_rng(21), 0, (3, 3, 3), 3)
        assert solve(P, max_iter=2).status == socp.MAX_ITER
