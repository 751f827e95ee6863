"""Primal-dual interior-point solver for second-order cone programs.

Problems are taken in standard form::

    minimize    c'x
    subject to  A x = b
                x = (x_free, x_1, ..., x_K),  x_k in Q^{d_k}

with ``Q^d = {t : t_0 >= ||t_1:||}``.  Internally the cone block is handled
as a slack ``s = x_cone`` and the method iterates on the homogeneous
self-dual embedding with Nesterov-Todd scaling and a Mehrotra
predictor-corrector.  Each Newton system is reduced to the quasi-definite
matrix ``[[H + dI, A'], [A, -dI]]`` (``H`` is block diagonal on the cone
variables), factored by a sparse LDL' and polished by iterative refinement.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import structural_rank

log = logging.getLogger(__name__)

try:
    import qdldl
except ImportError:  # pragma: no cover - exercised only without qdldl
    qdldl = None

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"
NUMERICAL = "numerical"


@dataclass(frozen=True)
class ConeSpec:
    n_free: int
    quad_cones: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "quad_cones", tuple(int(d) for d in self.quad_cones))
        if self.n_free < 0:
            raise ValueError("n_free must be non-negative")
        if any(d < 2 for d in self.quad_cones):
            raise ValueError("quadratic cones need dimension >= 2")

    @property
    def cone_dim(self):
        return int(sum(self.quad_cones))

    @property
    def dim(self):
        return self.n_free + self.cone_dim


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        if self.A.shape != (len(self.b), len(self.c)):
            raise ValueError(f"A has shape {self.A.shape}, expected {(len(self.b), len(self.c))}")
        if self.cones.dim != len(self.c):
            raise ValueError(f"cone spec covers {self.cones.dim} variables, c has {len(self.c)}")

    @property
    def n_var(self):
        return len(self.c)


@dataclass
class SolveOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    regularization: float = 1e-8
    refine_steps: int = 10
    step_fraction: float = 0.99
    presolve: bool = True
    verbose: bool = False


@dataclass
class SolveReport:
    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    s: np.ndarray | None = None
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    rel_gap: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    cone_violation: float = float("nan")
    iterations: int = 0
    wall_time: float = 0.0
    history: list = field(default_factory=list)
    message: str = ""


# ---------------------------------------------------------------------------
# cone algebra
# ---------------------------------------------------------------------------

class _Cones:
    """Vectorised second-order cone operations grouped by cone dimension."""

    def __init__(self, dims):
        self.dims = list(dims)
        self.m = int(sum(self.dims))
        self.degree = len(self.dims)
        offsets = np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(int) if self.dims else []
        groups = {}
        for off, d in zip(offsets, self.dims):
            groups.setdefault(d, []).append(off)
        self.groups = [(d, np.asarray(offs)[:, None] + np.arange(d)) for d, offs in sorted(groups.items())]
        self.e = np.zeros(self.m)
        if self.dims:
            self.e[np.asarray(offsets)] = 1.0

    def blocks(self, v):
        return [v[idx] for _, idx in self.groups]

    def min_eig(self, v):
        out = np.inf
        for V in self.blocks(v):
            out = min(out, float(np.min(V[:, 0] - np.linalg.norm(V[:, 1:], axis=1))))
        return out

    def product(self, u, v):
        """Jordan product u o v."""
        out = np.empty(self.m)
        for _, idx in self.groups:
            U, V = u[idx], v[idx]
            out[idx[:, 0]] = np.sum(U * V, axis=1)
            out[idx[:, 1:]] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
        return out

    def divide(self, lam, d):
        """Solve lam o x = d for x."""
        out = np.empty(self.m)
        for _, idx in self.groups:
            L, D = lam[idx], d[idx]
            l0, l1 = L[:, 0], L[:, 1:]
            det = l0 * l0 - np.sum(l1 * l1, axis=1)
            x0 = (l0 * D[:, 0] - np.sum(l1 * D[:, 1:], axis=1)) / det
            out[idx[:, 0]] = x0
            out[idx[:, 1:]] = (D[:, 1:] - x0[:, None] * l1) / l0[:, None]
        return out

    def max_step(self, v, dv):
        """Largest alpha with v + alpha dv in the cone (inf if unbounded)."""
        best = np.inf
        for _, idx in self.groups:
            V, D = v[idx], dv[idx]
            a = D[:, 0] ** 2 - np.sum(D[:, 1:] ** 2, axis=1)
            bb = V[:, 0] * D[:, 0] - np.sum(V[:, 1:] * D[:, 1:], axis=1)
            cc = np.maximum(V[:, 0] ** 2 - np.sum(V[:, 1:] ** 2, axis=1), 0.0)
            alpha = np.full(len(a), np.inf)
            disc = bb * bb - a * cc
            real = disc >= 0.0
            sq = np.sqrt(np.where(real, disc, 0.0))
            # roots of a t^2 + 2 bb t + cc via the cancellation-free pair q/a, cc/q
            q = -(bb + np.where(bb >= 0, sq, -sq))
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(a != 0.0, q / a, np.inf)
                r2 = np.where(q != 0.0, cc / q, np.inf)
            for r in (r1, r2):
                ok = real & (r > 0.0)
                alpha = np.where(ok, np.minimum(alpha, r), alpha)
            # linear case and leaving through the apex direction
            lin = (a == 0.0) & (bb < 0.0)
            with np.errstate(divide="ignore"):
                alpha = np.where(lin, np.minimum(alpha, -cc / (2.0 * bb)), alpha)
            neg0 = D[:, 0] < 0.0
            with np.errstate(divide="ignore"):
                alpha = np.where(neg0, np.minimum(alpha, -V[:, 0] / D[:, 0]), alpha)
            if len(alpha):
                best = min(best, float(np.min(alpha)))
        return best

    def nt_scaling(self, s, z):
        """Nesterov-Todd scaling blocks W, W^-1 (symmetric) and lambda = W z."""
        W, Winv = [], []
        lam = np.empty(self.m)
        for d, idx in self.groups:
            S, Z = s[idx], z[idx]
            sn = np.sqrt((S[:, 0] - np.linalg.norm(S[:, 1:], axis=1)) *
                         (S[:, 0] + np.linalg.norm(S[:, 1:], axis=1)))
            zn = np.sqrt((Z[:, 0] - np.linalg.norm(Z[:, 1:], axis=1)) *
                         (Z[:, 0] + np.linalg.norm(Z[:, 1:], axis=1)))
            Sb = S / sn[:, None]
            Zb = Z / zn[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.sum(Sb * Zb, axis=1)))
            w0 = (Sb[:, 0] + Zb[:, 0]) / (2.0 * gamma)
            w1 = (Sb[:, 1:] - Zb[:, 1:]) / (2.0 * gamma)[:, None]
            # keep w on the hyperboloid so that W and W^-1 are exact inverses
            w0 = np.sqrt(1.0 + np.sum(w1 * w1, axis=1))
            eta = np.sqrt(sn / zn)
            outer = w1[:, :, None] * w1[:, None, :] / (1.0 + w0)[:, None, None]
            core = np.eye(d - 1)[None] + outer
            Wg = np.empty((len(idx), d, d))
            Wg[:, 0, 0] = w0
            Wg[:, 0, 1:] = w1
            Wg[:, 1:, 0] = w1
            Wg[:, 1:, 1:] = core
            Wi = Wg.copy()
            Wi[:, 0, 1:] = -w1
            Wi[:, 1:, 0] = -w1
            Wg *= eta[:, None, None]
            Wi /= eta[:, None, None]
            W.append(Wg)
            Winv.append(Wi)
            lam[idx] = np.einsum("kij,kj->ki", Wg, Z)
        return W, Winv, lam

    def apply(self, blocks, v):
        out = np.empty(self.m)
        for Wg, (_, idx) in zip(blocks, self.groups):
            out[idx] = np.einsum("kij,kj->ki", Wg, v[idx])
        return out


# ---------------------------------------------------------------------------
# presolve
# ---------------------------------------------------------------------------

@dataclass
class Presolved:
    program: ConicProgram | None
    n_orig: int
    p_orig: int
    keep_rows: np.ndarray
    keep_cols: np.ndarray
    fixed: list
    row_scale: np.ndarray
    col_scale: np.ndarray
    offset: float
    c_orig: np.ndarray
    A_orig: sp.csr_matrix
    status: str | None = None
    message: str = ""

    def recover(self, xh, yh):
        """Map a solution of the reduced, scaled program back to the original."""
        x = np.zeros(self.n_orig)
        x[self.keep_cols] = self.col_scale * xh
        y = np.zeros(self.p_orig)
        y[self.keep_rows] = self.row_scale * yh
        for row, col, val, coef in self.fixed:
            x[col] = val
        if self.fixed:
            Ac = self.A_orig.tocsc()
            for row, col, val, coef in reversed(self.fixed):
                colv = Ac[:, col]
                others = float((colv.T @ y).item()) - coef * y[row]
                y[row] = (self.c_orig[col] - others) / coef
        return x, y


def presolve(program, tol=1e-12, scale_passes=4):
    """Remove empty, duplicate and singleton rows, then equilibrate.

    Singleton rows on free variables fix that variable.  Cone blocks are
    scaled by one factor each so the cone structure is preserved.  A row
    ``0 = nonzero`` makes the program primal infeasible.
    """
    c = program.c.copy()
    A = program.A.tocsr().copy()
    b = program.b.copy()
    p, n = A.shape
    nf = program.cones.n_free
    bscale = max(1.0, float(np.max(np.abs(b))) if len(b) else 1.0)
    A.eliminate_zeros()

    rows_alive = np.ones(p, dtype=bool)
    cols_alive = np.ones(n, dtype=bool)
    fixed = []
    offset = 0.0
    result = dict(status=None, message="")

    def infeasible(msg):
        result.update(status=PRIMAL_INFEASIBLE, message=msg)

    changed = True
    while changed and result["status"] is None:
        changed = False
        sub =A.multiply(cols_alive[None, :].astype(float)).tocsr()
        sub.eliminate_zeros()
        nnz = np.diff(sub.indptr)
        for i in np.flatnonzero(rows_alive & (nnz == 0)):
            if abs(b[i]) > tol * bscale:
                infeasible(f"row {i} reads 0 = {b[i]:.3e}")
                break
            rows_alive[i] = False
        if result["status"]:
            break
        for i in np.flatnonzero(rows_alive & (nnz == 1)):
            j = int(sub.indices[sub.indptr[i]])
            if j >= nf or not cols_alive[j]:
                continue
            coef = float(sub.data[sub.indptr[i]])
            val = b[i] / coef
            col = A[:, j].toarray().ravel()
            b -= col * val
            b[i] = 0.0
            offset += c[j] * val
            cols_alive[j] = False
            rows_alive[i] = False
            fixed.append((int(i), j, val, coef))
            changed = True
            break  # recompute row counts after every substitution

    keep_cols = np.flatnonzero(cols_alive)
    if result["status"] is None:
        sub = A[:, keep_cols].tocsr()
        seen = {}
        for i in np.flatnonzero(rows_alive):
            lo, hi = sub.indptr[i], sub.indptr[i + 1]
            idx = sub.indices[lo:hi]
            val = sub.data[lo:hi]
            order = np.argsort(idx)
            idx, val = idx[order], val[order]
            lead = val[0]
            key = (tuple(idx.tolist()), tuple(np.round(val / lead, 12).tolist()))
            if key in seen:
                k, klead = seen[key]
                if abs(b[i] / lead - b[k] / klead) > 1e-9 * max(1.0, abs(b[k] / klead)):
                    infeasible(f"rows {k} and {i} are parallel with different right-hand sides")
                    break
                rows_alive[i] = False
            else:
                seen[key] = (i, lead)

    keep_rows = np.flatnonzero(rows_alive)
    if result["status"] is not None:
        return Presolved(None, n, p, keep_rows, keep_cols, fixed, np.ones(0), np.ones(0), offset,
                         program.c, program.A, result["status"], result["message"])

    Ah = A[keep_rows][:, keep_cols].tocsr()
    bh = b[keep_rows]
    ch = c[keep_cols]
    nf_new = int(np.sum(keep_cols < nf))
    cone_dims = program.cones.quad_cones

    # geometric-mean equilibration; one factor per cone block
    R = np.ones(Ah.shape[0])
    C = np.ones(Ah.shape[1])
    block_of = np.concatenate([np.arange(nf_new),
                               nf_new + np.repeat(np.arange(len(cone_dims)), cone_dims)]).astype(int)
    n_blocks = nf_new + len(cone_dims)
    for _ in range(scale_passes):
        M = sp.diags(R) @ Ah @ sp.diags(C)
        M = abs(M).tocsr()
        if M.nnz == 0:
            break
        rmax = _reduce(M, np.maximum, 0.0)
        rmin = _reduce(M, np.minimum, np.inf)
        rs = _geo_factor(rmax, rmin)
        R *= np.clip(rs, 1e-8, 1e8)
        M = abs(sp.diags(R) @ Ah @ sp.diags(C)).tocsc()
        Mc = M.tocoo()
        bmax = np.zeros(n_blocks)
        bmin = np.full(n_blocks, np.inf)
        np.maximum.at(bmax, block_of[Mc.col], Mc.data)
        np.minimum.at(bmin, block_of[Mc.col], Mc.data)
        cs = _geo_factor(bmax, bmin)
        C *= np.clip(cs, 1e-8, 1e8)[block_of]
    Ah = (sp.diags(R) @ Ah @ sp.diags(C)).tocsr()
    prog = ConicProgram(c=C * ch, A=Ah, b=R * bh, cones=ConeSpec(nf_new, cone_dims))
    return Presolved(prog, n, p, keep_rows, keep_cols, fixed, R, C, offset, program.c, program.A)


def _geo_factor(vmax, vmin):
    """1/sqrt(max*min) where a row/block has entries, 1 elsewhere."""
    out = np.ones_like(vmax)
    ok = vmax > 0
    out[ok] = 1.0 / np.sqrt(vmax[ok] * vmin[ok])
    return out


def _reduce(M, op, init):
    out = np.full(M.shape[0], init, dtype=float)
    nnz = np.diff(M.indptr)
    rows = np.repeat(np.arange(M.shape[0]), nnz)
    op.at(out, rows, M.data)
    out[nnz == 0] = 0.0
    return out


# ---------------------------------------------------------------------------
# KKT system
# ---------------------------------------------------------------------------

class _KKT:
    """Reduced quasi-definite system [[H + dI, A'], [A, -dI]] with fixed pattern."""

    def __init__(self, A, nf, cones, reg):
        self.A = A.tocsr()
        self.AT = A.T.tocsr()
        self.n = A.shape[1]
        self.p = A.shape[0]
        self.nf = nf
        self.cones = cones
        self.reg = reg
        n, p = self.n, self.p
        rows, cols = [], []
        # free diagonal
        rows.append(np.arange(nf))
        cols.append(np.arange(nf))
        # cone blocks (upper triangle incl. diagonal)
        self._block_slices = []
        pos = nf
        for d, idx in cones.groups:
            iu, ju = np.triu_indices(d)
            r = nf + idx[:, iu]
            cc = nf + idx[:, ju]
            rows.append(r.ravel())
            cols.append(cc.ravel())
            self._block_slices.append((iu, ju, r.size))
            pos += r.size
        # A' in the upper-right block
        Ac = self.A.tocoo()
        rows.append(Ac.col)
        cols.append(n + Ac.row)
        self._a_vals = Ac.data
        rows.append(n + np.arange(p))
        cols.append(n + np.arange(p))
        self.rows = np.concatenate(rows).astype(np.int64)
        self.cols = np.concatenate(cols).astype(np.int64)
        N = n + p
        marker = sp.csc_matrix((np.arange(1, len(self.rows) + 1, dtype=float), (self.rows, self.cols)),
                               shape=(N, N))
        self.perm = marker.data.astype(np.int64) - 1
        self.matrix = marker
        self.solver = None
        self._ldl = None
        self.fallback = None
        self.n_fallbacks = 0
        self.H = None

    def factor(self, Hblocks):
        vals = [np.full(self.nf, self.reg)]
        for Hg, (iu, ju, _) in zip(Hblocks, self._block_slices):
            v = Hg[:, iu, ju].copy()
            diag = iu == ju
            v[:, diag] += self.reg
            vals.append(v.ravel())
        vals.append(self._a_vals)
        vals.append(np.full(self.p, -self.reg))
        data = np.concatenate(vals)
        self.matrix.data = data[self.perm]
        self.H = Hblocks
        self.fallback = None
        self.solver = None
        if qdldl is not None:
            try:
                if self._ldl is None:
                    self._ldl = qdldl.Solver(self.matrix, upper=True)
                else:
                    self._ldl.update(self.matrix, upper=True)
                self.solver = self._ldl
            except RuntimeError:
                # zero pivot without pivoting; fall through to LU
                self._ldl = None
        if self.solver is None:
            self._use_lu()

    def _use_lu(self):
        full = self.matrix + sp.triu(self.matrix, 1).T
        self.solver = _SuperLU(full.tocsc())
        self.fallback = "lu"
        self.n_fallbacks += 1

    def _mul(self, u):
        """Unregularised reduced matrix times u."""
        n = self.n
        ux, uy = u[:n], u[n:]
        top = self.AT @ uy
        top[self.nf:] += self.cones.apply(self.H, ux[self.nf:])
        return np.concatenate([top, self.A @ ux])

    def _refined(self, rhs, steps):
        u = self.solver.solve(rhs)
        r = rhs - self._mul(u)
        rn = np.linalg.norm(r)
        tol = 1e-12 + 1e-13 * np.linalg.norm(rhs)
        for _ in range(steps):
            if not np.isfinite(rn) or rn <= tol:
                break
            cand = u + self.solver.solve(r)
            rc = rhs - self._mul(cand)
            rcn = np.linalg.norm(rc)
            if not rcn < rn:
                break
            improved = rcn < rn / 5.0
            u, r, rn = cand, rc, rcn
            if not improved:
                break
        return u, r

    def solve(self, rhs, steps):
        u, r = self._refined(rhs, steps)
        bad = not np.all(np.isfinite(u)) or np.linalg.norm(r) > 1e-6 * (1.0 + np.linalg.norm(rhs))
        if bad and self.fallback is None:
            self._use_lu()
            u, r = self._refined(rhs, steps)
        return u


class _SuperLU:
    """Pivoted LU used when the LDL' factorisation breaks down."""

    def __init__(self, M):
        from scipy.sparse.linalg import splu
        self.lu = splu(M)

    def solve(self, b):
        return self.lu.solve(b)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _check_finite(program):
    for name, arr in (("c", program.c), ("b", program.b), ("A", program.A.data)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite entries in {name}")


def solve(program, opts=None, **kwargs):
    """Solve a :class:`ConicProgram`; returns a :class:`SolveReport`.

    Keyword arguments override fields of ``opts``.
    """
    opts = opts or SolveOptions()
    if kwargs:
        opts = SolveOptions(**{**opts.__dict__, **kwargs})
    _check_finite(program)
    t0 = time.perf_counter()

    if opts.presolve:
        pre = presolve(program)
        if pre.status is not None:
            return SolveReport(status=pre.status, message=pre.message,
                               wall_time=time.perf_counter() - t0)
        work = pre.program
    else:
        pre = None
        work = program

    if work.A.shape[0] > 0 and structural_rank(work.A) < work.A.shape[0]:
        return SolveReport(status=NUMERICAL, wall_time=time.perf_counter() - t0,
                           message=f"constraint matrix is structurally rank deficient "
                                   f"(rank {structural_rank(work.A)} < {work.A.shape[0]} rows)")

    rep = _hsd(work, opts)
    if rep.x is not None:
        if pre is not None:
            x, y = pre.recover(rep.x, rep.y)
        else:
            x, y = rep.x, rep.y
        rep.x, rep.y = x, y
        if rep.status == OPTIMAL:
            _final_metrics(program, rep)
    rep.wall_time = time.perf_counter() - t0
    return rep


def _final_metrics(program, rep):
    x, y = rep.x, rep.y
    rep.s = program.c - program.A.T @ y
    rep.primal_objective = float(program.c @ x)
    rep.dual_objective = float(program.b @ y)
    rep.primal_residual = float(np.linalg.norm(program.A @ x - program.b) /
                                (1.0 + np.linalg.norm(program.b)))
    nf = program.cones.n_free
    cones = _Cones(program.cones.quad_cones)
    rep.cone_violation = max(0.0, -cones.min_eig(x[nf:])) if cones.dims else 0.0
    ds = rep.s[:nf]
    dual_cone = max(0.0, -cones.min_eig(rep.s[nf:])) if cones.dims else 0.0
    rep.dual_residual = float(max(np.linalg.norm(ds), dual_cone) / (1.0 + np.linalg.norm(program.c)))


def _hsd(prog, opts):
    A, b, c = prog.A, prog.b, prog.c
    p, n = A.shape
    nf = prog.cones.n_free
    cones = _Cones(prog.cones.quad_cones)
    m = cones.m
    if m == 0:
        return SolveReport(status=NUMERICAL, message="program without cones is not supported")
    kkt = _KKT(A, nf, cones, opts.regularization)
    eye_blocks = [np.broadcast_to(np.eye(d), (len(idx), d, d)).copy() for d, idx in cones.groups]

    def ksolve(H, Winv, r1, r2, r3, t=None):
        """Solve K [dx; dy; dz] = [r1; r2; r3 - W t] with G x = -x_cone.

        Returns ``dx, dy`` and the scaled ``W dz``.  The ``t`` term is kept
        out of the unscaled right-hand side, which avoids cancellation
        between ``W t`` and ``W^2 dz`` when the scaling is ill-conditioned.
        """
        rx = r1.copy()
        rx[nf:] -= cones.apply(H, r3)
        if t is not None:
            rx[nf:] += cones.apply(Winv, t)
        u = kkt.solve(np.concatenate([rx, r2]), opts.refine_steps)
        dx, dy = u[:n], u[n:]
        dzs = cones.apply(Winv, -dx[nf:] - r3)
        if t is not None:
            dzs += t
        return dx, dy, dzs

    kkt.factor(eye_blocks)
    x, _, z = ksolve(eye_blocks, eye_blocks, np.zeros(n), b, np.zeros(m))
    s = -z
    _, y, z = ksolve(eye_blocks, eye_blocks, -c, np.zeros(p), np.zeros(m))
    for v in (s, z):
        ts = -cones.min_eig(v)
        if ts >= -1e-8 * max(1.0, np.linalg.norm(v)):
            v += (1.0 + ts) * cones.e
    tau, kappa = 1.0, 1.0

    bnorm = max(1.0, np.linalg.norm(b))
    cnorm = max(1.0, np.linalg.norm(c))
    history = []
    status = MAX_ITER
    msg = ""
    it = 0
    for it in range(opts.max_iter + 1):
        ATy = A.T @ y
        rx = ATy + c * tau
        rx[nf:] -= z
        ry = A @ x - b * tau
        rz = s - x[nf:]
        cx, by = float(c @ x), float(b @ y)
        rt = kappa + cx + by
        sz = float(s @ z)
        mu = (sz + tau * kappa) / (cones.degree + 1)
        pcost, dcost = cx / tau, -by / tau
        pres = max(np.linalg.norm(ry) / bnorm, np.linalg.norm(rz)) / tau
        dres = np.linalg.norm(rx) / cnorm / tau
        gap = sz / tau ** 2
        relgap = max(gap, abs(pcost - dcost)) / max(1.0, abs(pcost))
        history.append(dict(iter=it, mu=mu, pcost=pcost, dcost=dcost, gap=gap,
                            pres=pres, dres=dres, tau=tau, kappa=kappa,
                            ry=float(np.linalg.norm(ry)), rz=float(np.linalg.norm(rz))))
        if opts.verbose:
            log.info("%3d mu=%.2e pcost=% .8e dcost=% .8e gap=%.1e pres=%.1e dres=%.1e",
                     it, mu, pcost, dcost, gap, pres, dres)
        if not all(np.isfinite([mu, pcost, dcost, pres, dres])):
            status, msg = NUMERICAL, "non-finite iterate"
            break
        # an infeasible iterate can show pcost < dcost; keep going until weak duality holds
        weak = pcost - dcost >= -0.1 * opts.gap_tol * (1.0 + abs(pcost))
        if pres <= opts.feas_tol and dres <= opts.feas_tol and relgap <= opts.gap_tol and weak:
            status = OPTIMAL
            break
        if by < 0.0:
            certx = ATy.copy()
            certx[nf:] -= z
            pinf = np.linalg.norm(certx) / cnorm / (-by)
            if pinf <= opts.feas_tol:
                status, msg = PRIMAL_INFEASIBLE, f"dual ray certificate residual {pinf:.2e}"
                break
        if cx < 0.0:
            dinf = max(np.linalg.norm(A @ x) / bnorm, np.linalg.norm(s - x[nf:])) / (-cx)
            if dinf <= opts.feas_tol:
                status, msg = DUAL_INFEASIBLE, f"primal ray certificate residual {dinf:.2e}"
                break
        if it == opts.max_iter:
            break

        if cones.min_eig(s) <= 0.0 or cones.min_eig(z) <= 0.0:
            status, msg = NUMERICAL, "iterate left the cone interior"
            break
        try:
            W, Winv, lam = cones.nt_scaling(s, z)
            H = [np.einsum("kij,kjl->kil", Wi, Wi) for Wi in Winv]
            kkt.factor(H)
            u2 = ksolve(H, Winv, c, -b, np.zeros(m))
            p_u2 = float(c @ u2[0] + b @ u2[1])

            def direction(sigma, ds_target, dk_target):
                # directions for s and z are returned scaled: W^-1 ds and W dz
                t = cones.divide(lam, ds_target)
                r3 = -(1.0 - sigma) * rz
                b4 = -(1.0 - sigma) * rt - dk_target / tau
                u1 = ksolve(H, Winv, -(1.0 - sigma) * rx, -(1.0 - sigma) * ry, r3, t)
                dtau = (float(c @ u1[0] + b @ u1[1]) - b4) / (p_u2 + kappa / tau)
                dx = u1[0] - dtau * u2[0]
                dy = u1[1] - dtau * u2[1]
                dzs = u1[2] - dtau * u2[2]
                ds = dx[nf:] + r3
                dss = cones.apply(Winv, ds)
                dkappa = (dk_target - kappa * dtau) / tau
                return dx, dy, dzs, dss, dtau, dkappa, ds

            def step_length(dss, dzs, dtau, dkappa):
                a = min(cones.max_step(lam, dss), cones.max_step(lam, dzs))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkappa < 0:
                    a = min(a, -kappa / dkappa)
                return a

            lam2 = cones.product(lam, lam)
            aff = direction(0.0, -lam2, -tau * kappa)
            a_aff = min(1.0, step_length(aff[3], aff[2], aff[4], aff[5]))
            sigma = (1.0 - a_aff) ** 3
            corr = cones.product(aff[3], aff[2])
            dx, dy, dzs, dss, dtau, dkappa, ds = direction(
                sigma, -lam2 - corr + sigma * mu * cones.e, -tau * kappa - aff[4] * aff[5] + sigma * mu)
            alpha = min(1.0, opts.step_fraction * step_length(dss, dzs, dtau, dkappa))
        except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
            status, msg = NUMERICAL, f"linear algebra breakdown: {exc}"
            break
        if not np.isfinite(alpha) or alpha < 1e-12:
            status, msg = NUMERICAL, f"step length collapsed ({alpha:.1e})"
            break
        x = x + alpha * dx
        y = y + alpha * dy
        # unscaled increment keeps s - x_cone free of scaling round-off
        s = s + alpha * ds
        z = z + alpha * cones.apply(Winv, dzs)
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    rep = SolveReport(status=status, iterations=it, history=history, message=msg)
    last = history[-1]
    rep.rel_gap = max(last["gap"], abs(last["pcost"] - last["dcost"])) / max(1.0, abs(last["pcost"]))
    rep.primal_residual, rep.dual_residual = last["pres"], last["dres"]
    rep.primal_objective, rep.dual_objective = last["pcost"], last["dcost"]
    if status == PRIMAL_INFEASIBLE:
        rep.y = -y / max(-float(b @ y), 1e-300)
        rep.x = np.zeros(n)
    elif status == DUAL_INFEASIBLE:
        rep.x = x / max(-float(c @ x), 1e-300)
        rep.y = np.zeros(p)
    else:
        rep.x = x / tau
        rep.y = -y / tau
    return rep
