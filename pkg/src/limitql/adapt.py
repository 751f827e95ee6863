"""Adaptive refinement loop driven by the smoothed strain-rate norm.

Each pass builds the conforming mesh of the current quadtree, solves the
limit-analysis program, evaluates the per-edge L2 norm of the smoothed
strain rate, averages it onto elements, marks elements by the Dörfler
fraction rule and subdivides the marked leaves once.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import problem as lp
from . import socp
from .mesh import MeshError, extract_conforming

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.7
CSV_HEADER = ("iter", "n_elements", "n_s", "N_var", "alpha_plus", "Theta", "solve_seconds")


def edge_indicator(result, operator):
    """Per-edge indicator ``sqrt(A_k (e11^2 + e22^2 + 2 e12^2))``.

    Parameters
    ----------
    result : CollapseResult or ndarray
        Solved collapse result, or a global velocity vector.
    operator : StrainOperator
        Smoothed strain operator of the mesh the velocities live on.

    Returns
    -------
    ndarray, shape (n_s,)
    """
    d = result.velocities if hasattr(result, "velocities") else result
    if d is None:
        raise ValueError("result carries no velocity field")
    d = np.asarray(d, dtype=float)
    if d.shape != (operator.B.shape[1],):
        raise MeshError(f"velocity vector of length {d.shape} does not match the mesh "
                        f"({operator.B.shape[1]} DOFs)")
    eps = operator.strains(d)
    # tensor shear component is half the engineering shear
    sq = eps[:, 0] ** 2 + eps[:, 1] ** 2 + 0.5 * eps[:, 2] ** 2
    return np.sqrt(operator.areas * sq)


def element_indicator(edge_theta, mesh):
    """Mean of the edge indicators over each element's polygon edges."""
    edge_theta = np.asarray(edge_theta, dtype=float)
    if len(edge_theta) != mesh.n_edges:
        raise MeshError(f"{len(edge_theta)} edge values for a mesh with {mesh.n_edges} edges")
    return np.array([edge_theta[ids].mean() for ids in mesh.element_edges])


def mark(theta_e, theta):
    """Dörfler marking.

    Sort the element indicators in descending order (ties by ascending id)
    and return the ids of the shortest prefix whose sum reaches
    ``theta * sum(theta_e)``.  A vanishing total gives an empty set.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must be in (0,1)")
    theta_e = np.asarray(theta_e, dtype=float)
    if np.any(theta_e < 0.0) or not np.all(np.isfinite(theta_e)):
        raise ValueError("indicators must be finite and nonnegative")
    total = float(theta_e.sum())
    if total == 0.0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((np.arange(len(theta_e)), -theta_e))
    csum = np.cumsum(theta_e[order])
    n = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[:min(n, len(order))])


@dataclass
class IterationRecord:
    iteration: int
    n_elements: int
    n_s: int
    n_var: int
    alpha_plus: float
    theta_total: float
    solve_seconds: float
    mesh: object = None
    result: object = None
    element_theta: np.ndarray | None = None

    def row(self):
        return (self.iteration, self.n_elements, self.n_s, self.n_var, self.alpha_plus,
                self.theta_total, self.solve_seconds)


@dataclass
class AdaptiveRun:
    """History of an adaptive run.

    ``status`` is ``"completed"``, ``"converged"`` (early stop),
    ``"rigid"`` (empty marking) or the solver status of a failed pass, in
    which case ``failure`` holds that report.
    """

    records: list = field(default_factory=list)
    status: str = "completed"
    failure: object = None
    forest: object = None

    @property
    def ok(self):
        return self.failure is None

    @property
    def alphas(self):
        return np.array([r.alpha_plus for r in self.records])

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def to_csv(self):
        buf = io.StringIO()
        write_csv(self.records, buf)
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(records, stream):
    """Write the per-iteration table with 17 significant digits."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([_fmt(v) for v in r.row()])


def adaptive_loop(bench, n_iter, theta=DEFAULT_THETA, solver_opts=None, strategy="adaptive",
                  early_stop=None, forest=None, keep_meshes=True, callback=None):
    """Solve, estimate, mark and refine ``n_iter`` times.

    Parameters
    ----------
    bench : Benchmark
        Problem definition (domain, material, load).
    n_iter : int
        Number of solves.  Refinement happens between solves only, so the
        last record's mesh is the one that was solved.
    theta : float
        Dörfler fraction in (0, 1).
    solver_opts : SolveOptions, optional
    strategy : {"adaptive", "uniform"}
        ``"uniform"`` subdivides every leaf each pass.
    early_stop : float, optional
        Stop once ``|alpha_i - alpha_{i-1}| / alpha_i`` falls below this.
    forest : QuadtreeForest, optional
        Starting forest; defaults to ``bench.forest()``.
    keep_meshes : bool
        Keep mesh and result objects on every record (the final one is
        always kept).
    callback : callable, optional
        Called with each :class:`IterationRecord` as soon as it exists.

    Returns
    -------
    AdaptiveRun
    """
    if int(n_iter) < 1:
        raise ValueError(f"n_iter must be at least 1, got {n_iter}")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must be in (0,1)")
    if strategy not in ("adaptive", "uniform"):
        raise ValueError(f"unknown refinement strategy '{strategy}'")
    opts = solver_opts or socp.SolveOptions()
    forest = bench.forest() if forest is None else forest.copy()
    run = AdaptiveRun(forest=forest)
    for it in range(1, int(n_iter) + 1):
        mesh = extract_conforming(forest)
        prob = lp.assemble(mesh, bench.material, bench.load)
        t0 = time.perf_counter()
        report = socp.solve(prob.program, opts)
        elapsed = time.perf_counter() - t0
        res = lp.recover(prob, report)
        if not res.ok:
            log.error("iteration %d: solver returned %s (%s)", it, report.status, report.message)
            run.status = report.status
            run.failure = report
            return run
        eta_k = edge_indicator(res, prob.operator)
        eta_e = element_indicator(eta_k, mesh)
        rec = IterationRecord(iteration=it, n_elements=mesh.n_elements, n_s=prob.n_s,
                              n_var=prob.n_var, alpha_plus=res.alpha_plus,
                              theta_total=float(eta_e.sum()), solve_seconds=elapsed,
                              mesh=mesh, result=res, element_theta=eta_e)
        if run.records and not keep_meshes:
            prev = run.records[-1]
            prev.mesh = prev.result = prev.element_theta = None
        run.records.append(rec)
        log.info("iteration %d: %d elements, N_var %d, alpha+ %.6f, Theta %.4e, %.2fs",
                 it, rec.n_elements, rec.n_var, rec.alpha_plus, rec.theta_total, elapsed)
        if callback is not None:
            callback(rec)
        if it == n_iter:
            break
        if early_stop is not None and len(run.records) > 1:
            prev = run.records[-2].alpha_plus
            if abs(rec.alpha_plus - prev) / abs(rec.alpha_plus) < early_stop:
                run.status = "converged"
                break
        if strategy == "uniform":
            marked = np.arange(mesh.n_elements)
        else:
            marked = mark(eta_e, theta)
            if len(marked) == 0:
                run.status = "rigid"
                break
        forest.refine(mesh.cells[marked])
    return run
