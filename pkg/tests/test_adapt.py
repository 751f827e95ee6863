"""Strain-rate indicator, Dörfler marking and the adaptive loop."""
import io
import itertools

import numpy as np
import pytest
from conftest import grid_domain, linear_field

from limitql import adapt, bench, socp
from limitql.mesh import MeshError, build_initial, extract_conforming
from limitql.smoothing import assemble_operator


def _operator(nx=1, ny=1):
    m = extract_conforming(build_initial(grid_domain(nx, ny, nx, ny)))
    return m, assemble_operator(m)


def brute_force_mark(theta_e, theta):
    """Smallest prefix (descending order, ties by id) reaching theta * total."""
    order = sorted(range(len(theta_e)), key=lambda i: (-theta_e[i], i))
    target = theta * sum(theta_e)
    for k in range(1, len(order) + 1):
        if sum(theta_e[i] for i in order[:k]) >= target:
            return sorted(order[:k])
    return sorted(order)


@pytest.fixture(scope="module")
def footing_run():
    return adapt.adaptive_loop(bench.footing(0.0), 4)


class TestEdgeIndicator:
    def test_zero_velocity(self):
        m, op = _operator()
        assert not np.any(adapt.edge_indicator(np.zeros(m.n_dofs), op))

    def test_pure_shear_single_square(self):
        m, op = _operator()
        theta = adapt.edge_indicator(linear_field(m, [[0, 1], [0, 0]]), op)
        assert theta == pytest.approx([np.sqrt(1.0 / 8.0)] * 4, rel=1e-13)

    def test_rigid_rotation(self):
        m, op = _operator(3, 2)
        assert np.abs(adapt.edge_indicator(linear_field(m, [[0, -1], [1, 0]], (2, 1)), op)).max() < 1e-13

    def test_length_mismatch_rejected(self):
        m, op = _operator()
        with pytest.raises(MeshError):
            adapt.edge_indicator(np.zeros(m.n_dofs + 2), op)

    def test_uses_result_velocities(self, footing_run):
        rec = footing_run.records[0]
        op = assemble_operator(rec.mesh)
        direct = adapt.edge_indicator(rec.result.velocities, op)
        assert adapt.edge_indicator(rec.result, op) == pytest.approx(direct)


class TestElementIndicator:
    def test_mean_over_square(self):
        m, _ = _operator()
        assert adapt.element_indicator(np.ones(4), m) == pytest.approx([1.0])

    def test_pentagon_mean(self):
        f = build_initial(grid_domain(2, 1, 2, 1))
        f.refine([0])
        m = extract_conforming(f)
        pent = next(e for e, p in enumerate(m.elements) if len(p) == 5)
        vals = np.zeros(m.n_edges)
        vals[m.element_edges[pent][-1]] = 5.0
        assert adapt.element_indicator(vals, m)[pent] == pytest.approx(1.0)

    def test_uniform_strain_interior_elements_equal(self):
        m, op = _operator(4, 4)
        th = adapt.element_indicator(adapt.edge_indicator(linear_field(m, [[1, 0.5], [0.2, -0.3]]), op), m)
        interior = [e for e in range(m.n_elements)
                    if all(m.edge_tags[k] is None for k in m.element_edges[e])]
        assert len(interior) == 4
        assert np.ptp(th[interior]) < 1e-14

    def test_edge_count_mismatch(self):
        m, _ = _operator()
        with pytest.raises(MeshError):
            adapt.element_indicator(np.ones(3), m)


class TestMark:
    def test_example_half(self):
        assert adapt.mark([4, 3, 2, 1], 0.5).tolist() == [0, 1]

    def test_theta_near_one_marks_all(self):
        assert adapt.mark([1, 2, 3, 4], 1 - 1e-12).tolist() == [0, 1, 2, 3]

    def test_single_dominant(self):
        assert adapt.mark([10, 0, 0], 0.5).tolist() == [0]

    def test_ties_by_ascending_id(self):
        assert adapt.mark([1, 1, 1, 1], 0.5).tolist() == [0, 1]

    def test_rigid_gives_empty_set(self):
        assert len(adapt.mark(np.zeros(5), 0.7)) == 0

    @pytest.mark.parametrize("theta", [0.0, 1.0, 1.5, -0.2])
    def test_theta_domain(self, theta):
        with pytest.raises(ValueError, match=r"theta must be in \(0,1\)"):
            adapt.mark([1, 2], theta)

    def test_negative_indicator_rejected(self):
        with pytest.raises(ValueError):
            adapt.mark([1, -1], 0.5)

    def test_matches_brute_force_and_is_minimal(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 30))
            vals = rng.exponential(size=n) * (rng.uniform(size=n) < 0.8)
            vals = np.round(vals, int(rng.integers(0, 3)))
            theta = float(rng.uniform(0.05, 0.95))
            got = adapt.mark(vals, theta)
            if vals.sum() == 0:
                assert len(got) == 0
                continue
            assert got.tolist() == brute_force_mark(vals.tolist(), theta)
            assert vals[got].sum() >= theta * vals.sum()
            # dropping the smallest marked element loses the bulk criterion
            smallest = min(got, key=lambda i: (vals[i], -i))
            assert vals[got].sum() - vals[smallest] < theta * vals.sum()

    def test_no_smaller_set_reaches_bulk(self, rng):
        vals = rng.exponential(size=9)
        got = adapt.mark(vals, 0.6)
        for k in range(len(got) - 1, 0, -1):
            for sub in itertools.combinations(range(9), k):
                assert vals[list(sub)].sum() < 0.6 * vals.sum()


class TestAdaptiveLoop:
    def test_single_iteration_does_not_refine(self):
        b = bench.footing(0.0)
        run = adapt.adaptive_loop(b, 1)
        assert len(run.records) == 1
        assert run.records[0].n_elements == 40
        assert run.forest.n_cells == 40

    def test_records(self, footing_run):
        assert footing_run.ok and footing_run.status == "completed"
        assert [r.iteration for r in footing_run.records] == [1, 2, 3, 4]
        n_el = [r.n_elements for r in footing_run.records]
        assert n_el == sorted(n_el) and n_el[0] == 40
        for r in footing_run.records:
            assert r.theta_total == pytest.approx(r.element_theta.sum())
            assert r.n_s == r.mesh.n_edges

    def test_alpha_decreases(self, footing_run):
        a = footing_run.alphas
        assert np.all(np.diff(a) <= 5e-3)

    def test_deterministic(self, footing_run):
        again = adapt.adaptive_loop(bench.footing(0.0), 4)
        assert again.alphas.tobytes() == footing_run.alphas.tobytes()
        for r1, r2 in zip(again.records, footing_run.records):
            np.testing.assert_array_equal(r1.mesh.nodes, r2.mesh.nodes)

    def test_indicator_localization(self, footing_run):
        rec = footing_run.final
        m = rec.mesh
        cent = np.array([m.centroid(e) for e in range(m.n_elements)])
        near = np.linalg.norm(cent - np.array([0.5, 1.0]), axis=1) <= 2.0
        assert rec.element_theta[near].sum() >= 0.7 * rec.element_theta.sum()

    def test_uniform_strategy(self):
        run = adapt.adaptive_loop(bench.footing(0.0), 2, strategy="uniform")
        assert [r.n_elements for r in run.records] == [40, 160]

    def test_solver_failure_aborts_with_report(self):
        run = adapt.adaptive_loop(bench.footing(0.0), 3, solver_opts=socp.SolveOptions(max_iter=2))
        assert not run.ok and run.status == socp.MAX_ITER
        assert run.records == [] and run.failure.status == socp.MAX_ITER

    def test_failure_keeps_partial_history(self, monkeypatch):
        real = socp.solve
        calls = []

        def flaky(program, opts=None, **kw):
            calls.append(1)
            if len(calls) == 2:
                return socp.SolveReport(status=socp.NUMERICAL, message="injected")
            return real(program, opts, **kw)

        monkeypatch.setattr(adapt.socp, "solve", flaky)
        run = adapt.adaptive_loop(bench.footing(0.0), 4)
        assert len(run.records) == 1 and run.status == socp.NUMERICAL
        assert run.failure.message == "injected"

    def test_empty_marking_stops(self, monkeypatch):
        monkeypatch.setattr(adapt, "mark", lambda theta_e, theta: np.zeros(0, dtype=int))
        run = adapt.adaptive_loop(bench.footing(0.0), 4)
        assert run.status == "rigid" and len(run.records) == 1

    def test_early_stop(self):
        run = adapt.adaptive_loop(bench.footing(0.0), 6, early_stop=0.5)
        assert run.status == "converged" and len(run.records) == 2

    @pytest.mark.parametrize("kw", [dict(n_iter=0), dict(n_iter=2, theta=1.0), dict(n_iter=2, strategy="x")])
    def test_invalid_arguments(self, kw):
        with pytest.raises(ValueError):
            adapt.adaptive_loop(bench.footing(0.0), **kw)

    def test_keep_meshes_false_drops_old_snapshots(self):
        run = adapt.adaptive_loop(bench.footing(0.0), 2, keep_meshes=False)
        assert run.records[0].mesh is None and run.final.mesh is not None


class TestCsv:
    def test_header_and_precision(self, footing_run):
        buf = io.StringIO()
        adapt.write_csv(footing_run.records, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "iter,n_elements,n_s,N_var,alpha_plus,Theta,solve_seconds"
        assert len(lines) == 5
        first = lines[1].split(",")
        assert float(first[4]) == footing_run.records[0].alpha_plus
        assert first[0] == "1" and first[1] == "40"
        assert footing_run.to_csv() == buf.getvalue()
