"""Kinematic limit-analysis problem on a conforming polygonal mesh.

The discrete problem is

    minimize    sum_k kappa A_k lambda_k
    subject to  rho_k = dev_k . d,   lambda_k >= ||rho_k||,
                sin(phi) lambda_k = m_k . d,
                f_ext . d = 1,
                d = d_0 on Dirichlet components,

where ``dev_k . d = (eps_11 - eps_22, gamma_12)`` and ``m_k . d =
eps_11 + eps_22`` are taken from the smoothed strain of edge ``k``.  The
cone variable is ``lambda_k >= 2 sqrt(J2)``, so the dissipation density is
``kappa lambda_k`` with ``kappa = c cos(phi)``.  Dirichlet components are
eliminated by substitution.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import basis
from .mesh import MeshError
from .smoothing import StrainOperator, assemble_operator, element_dofs
from .socp import OPTIMAL, ConeSpec, ConicProgram

GAUSS2_POINTS = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
GAUSS2_WEIGHTS = np.array([0.5, 0.5])


class ZeroWorkError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialModel:
    """Mohr-Coulomb material; ``phi`` in radians.

    A von Mises material is represented with ``phi = 0`` and
    ``c = sigma_y / sqrt(3)``.
    """

    c: float = 1.0
    phi: float = 0.0

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError(f"cohesion must be positive, got {self.c}")
        if not 0.0 <= self.phi < 0.5 * math.pi:
            raise ValueError(f"friction angle must be in [0, pi/2), got {self.phi}")

    @classmethod
    def mohr_coulomb(cls, c, phi_degrees):
        return cls(c=float(c), phi=math.radians(phi_degrees))

    @classmethod
    def von_mises(cls, sigma_y):
        if not sigma_y > 0.0:
            raise ValueError(f"yield stress must be positive, got {sigma_y}")
        return cls(c=float(sigma_y) / math.sqrt(3.0), phi=0.0)

    @property
    def phi_degrees(self):
        return math.degrees(self.phi)

    @property
    def sin_phi(self):
        return math.sin(self.phi)

    @property
    def kappa(self):
        return self.c * math.cos(self.phi)

    def scaled(self, s):
        return MaterialModel(c=self.c * s, phi=self.phi)


@dataclass(frozen=True)
class LoadCase:
    """Loads and velocity boundary conditions by boundary group.

    ``dirichlet`` maps a group to a pair of prescribed components; ``None``
    leaves that component free (e.g. ``(0.0, None)`` is a roller fixing the
    x-velocity).
    """

    tractions: dict = field(default_factory=dict)
    body_force: tuple | None = None
    dirichlet: dict = field(default_factory=dict)

    @property
    def groups(self):
        return sorted(set(self.tractions) | set(self.dirichlet))

    def scaled(self, s):
        body = None if self.body_force is None else tuple(s * np.asarray(self.body_force, dtype=float))
        return LoadCase(tractions={k: tuple(s * np.asarray(v, dtype=float)) for k, v in self.tractions.items()},
                        body_force=body, dirichlet=dict(self.dirichlet))


def dirichlet_values(mesh, load):
    """Boolean mask and values of prescribed velocity DOFs (bubbles never fixed)."""
    mask = np.zeros(mesh.n_dofs, dtype=bool)
    vals = np.zeros(mesh.n_dofs)
    known = set(mesh.boundary_groups())
    for group in sorted(load.dirichlet):
        if group not in known:
            raise MeshError(f"Dirichlet group '{group}' does not exist on the mesh")
        comps = load.dirichlet[group]
        nodes = mesh.boundary_nodes(group)
        for i, v in enumerate(comps):
            if v is None:
                continue
            mask[2 * nodes + i] = True
            vals[2 * nodes + i] = float(v)
    return mask, vals


def external_work_vector(mesh, load, fixed_mask=None):
    """Vector ``f`` with ``f . d`` the external work rate of velocity ``d``.

    Tractions use 2-point Gauss on each loaded boundary edge (vertex
    functions are linear along element sides, bubbles vanish there).  Body
    forces are integrated with the 3-point rule on every sub-triangle,
    including the bubble columns.
    """
    f = np.zeros(mesh.n_dofs)
    known = set(mesh.boundary_groups())
    for group in sorted(load.tractions):
        if group not in known:
            raise MeshError(f"traction group '{group}' does not exist on the mesh")
        g = np.asarray(load.tractions[group], dtype=float)
        for k in mesh.boundary_edges(group):
            a, b = mesh.edges[k]
            length = float(np.linalg.norm(mesh.nodes[b] - mesh.nodes[a]))
            for t, w in zip(GAUSS2_POINTS, GAUSS2_WEIGHTS):
                f[2 * a:2 * a + 2] += w * length * (1.0 - t) * g
                f[2 * b:2 * b + 2] += w * length * t * g
    if fixed_mask is not None:
        # body forces on supported nodes are expected; only tractions are flagged
        clash = fixed_mask & (f != 0.0)
        if np.any(clash):
            warnings.warn(f"{int(clash.sum())} traction-loaded velocity components are fixed by "
                          "Dirichlet conditions; their work is forced to the prescribed value",
                          stacklevel=2)
    if load.body_force is not None and np.any(np.asarray(load.body_force) != 0.0):
        fb = np.asarray(load.body_force, dtype=float)
        for e in range(mesh.n_elements):
            _, wts, N = basis.element_quadrature(mesh.nodes[mesh.elements[e]], element=e)
            integ = wts @ N
            dofs = element_dofs(mesh, e)
            f[dofs[0::2]] += integ * fb[0]
            f[dofs[1::2]] += integ * fb[1]
    return f


@dataclass
class LimitProblem:
    """Assembled conic program plus the maps needed to interpret its solution."""

    program: ConicProgram
    mesh: object
    operator: StrainOperator
    material: MaterialModel
    free_dofs: np.ndarray
    fixed_mask: np.ndarray
    fixed_values: np.ndarray
    f_ext: np.ndarray

    @property
    def n_free(self):
        return len(self.free_dofs)

    @property
    def n_s(self):
        return self.operator.n_s

    @property
    def n_var(self):
        """Free velocity DOFs plus three variables per smoothing domain."""
        return self.program.n_var

    def velocities(self, x):
        d = self.fixed_values.copy()
        d[self.free_dofs] = x[:self.n_free]
        return d

    def lambdas(self, x):
        return x[self.n_free::3].copy() if self.n_s else np.zeros(0)


def assemble(mesh, material, load, operator=None):
    """Build the :class:`LimitProblem` of ``mesh`` under ``material`` and ``load``."""
    if mesh.n_elements == 0:
        raise MeshError("cannot assemble an empty mesh")
    if operator is None:
        operator = assemble_operator(mesh)
    fixed_mask, fixed_values = dirichlet_values(mesh, load)
    f = external_work_vector(mesh, load, fixed_mask)
    free = np.flatnonzero(~fixed_mask)
    f_free = f[free]
    rhs_work = 1.0 - float(f[fixed_mask] @ fixed_values[fixed_mask])
    if not np.any(f_free != 0.0):
        raise ZeroWorkError("zero external work: normalization impossible")

    n_s = operator.n_s
    nf = len(free)
    dev = operator.deviatoric()
    vol = operator.volumetric()
    dev_free = dev[:, free].tocoo()
    vol_free = vol[:, free].tocoo()
    d0 = fixed_values
    lam_col = nf + 3 * np.arange(n_s)

    # rho_k - dev_k . d = 0 on rows 3k, 3k+1
    rows = [3 * (dev_free.row // 2) + dev_free.row % 2]
    cols = [dev_free.col]
    vals = [-dev_free.data]
    rows.append(np.concatenate([3 * np.arange(n_s), 3 * np.arange(n_s) + 1]))
    cols.append(np.concatenate([lam_col + 1, lam_col + 2]))
    vals.append(np.ones(2 * n_s))
    # flow rule rows: sin(phi) lambda_k - m_k . d = 0
    rows.append(3 * vol_free.row + 2)
    cols.append(vol_free.col)
    vals.append(-vol_free.data)
    if material.sin_phi != 0.0:
        rows.append(3 * np.arange(n_s) + 2)
        cols.append(lam_col)
        vals.append(np.full(n_s, material.sin_phi))
    # normalisation row
    nzf = np.flatnonzero(f_free)
    rows.append(np.full(len(nzf), 3 * n_s))
    cols.append(nzf)
    vals.append(f_free[nzf])

    n_rows = 3 * n_s + 1
    n_var = nf + 3 * n_s
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_rows, n_var))
    A.sum_duplicates()
    b = np.zeros(n_rows)
    if np.any(d0 != 0.0):
        dev_d0 = dev @ d0
        vol_d0 = vol @ d0
        b[0:3 * n_s:3] = dev_d0[0::2]
        b[1:3 * n_s:3] = dev_d0[1::2]
        b[2:3 * n_s:3] = vol_d0
    b[-1] = rhs_work
    c = np.zeros(n_var)
    c[lam_col] = material.kappa * operator.areas
    program = ConicProgram(c=c, A=A, b=b, cones=ConeSpec(nf, [3] * n_s))
    return LimitProblem(program=program, mesh=mesh, operator=operator, material=material,
                        free_dofs=free, fixed_mask=fixed_mask, fixed_values=fixed_values, f_ext=f)


@dataclass
class CollapseResult:
    status: str
    alpha_plus: float = float("nan")
    velocities: np.ndarray | None = None
    lambdas: np.ndarray | None = None
    dissipation: np.ndarray | None = None
    rel_gap: float = float("nan")
    report: object = None

    @property
    def ok(self):
        return self.status == OPTIMAL


def recover(problem, report):
    """Turn a solver report into a :class:`CollapseResult`.

    Non-optimal reports are passed through with their status and no fields.
    """
    if report.status != OPTIMAL:
        return CollapseResult(status=report.status, report=report)
    x = report.x
    lam = problem.lambdas(x)
    dissipation = problem.material.kappa * lam
    alpha = float(np.sum(dissipation * problem.operator.areas))
    return CollapseResult(status=report.status, alpha_plus=alpha, velocities=problem.velocities(x),
                          lambdas=lam, dissipation=dissipation, rel_gap=report.rel_gap, report=report)
