"""Edge-based strain smoothing on the dual mesh.

Each mesh edge owns a smoothing domain made of one triangle per incident
element: the triangle spanned by the edge end points and that element's
vertex mean.  Such a triangle is exactly one sub-triangle of the element fan,
so basis gradients are constant on it and the area average of the symmetric
gradient is a finite sum.

Strain rows are ordered ``(eps_11, eps_22, gamma_12)``.  Velocity DOFs are
numbered ``2*i, 2*i+1`` for node ``i`` and ``2*(n_nodes + e) + (0, 1)`` for
the bubble of element ``e``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import basis
from .mesh import MeshError

DROP_TOL = 1e-13


@dataclass
class DomainPart:
    element: int
    sub_tri: int
    triangle: np.ndarray
    area: float


@dataclass
class SmoothingDomain:
    edge: int
    parts: list
    area: float
    dof_map: np.ndarray


@dataclass
class SmoothedOperator:
    B: np.ndarray
    area: float
    dof_map: np.ndarray


def element_dofs(mesh, e):
    """Global DOFs of element ``e``: vertex pairs then the bubble pair."""
    poly = mesh.elements[e]
    d = np.empty(2 * (len(poly) + 1), dtype=int)
    d[0:-2:2] = 2 * poly
    d[1:-2:2] = 2 * poly + 1
    d[-2] = mesh.bubble_dof(e)
    d[-1] = d[-2] + 1
    return d


def build_domains(mesh):
    """One :class:`SmoothingDomain` per mesh edge."""
    out = []
    for k in range(mesh.n_edges):
        a, b = mesh.edges[k]
        parts = []
        dofs = []
        for e, j in zip(mesh.edge_elements[k], mesh.edge_local[k]):
            if e < 0:
                continue
            tri = np.array([mesh.centroid(e), mesh.nodes[a], mesh.nodes[b]])
            area = abs(basis.signed_tri_area(tri))
            if not area > 0.0:
                raise MeshError(f"smoothing domain of edge {k} has a degenerate triangle")
            parts.append(DomainPart(element=int(e), sub_tri=int(j), triangle=tri, area=area))
            dofs.append(element_dofs(mesh, e))
        dof_map = np.unique(np.concatenate(dofs))
        out.append(SmoothingDomain(edge=k, parts=parts, area=sum(p.area for p in parts),
                                   dof_map=dof_map))
    return out


def sym_grad(grads):
    """Strain-displacement block for gradients (m, 2) -> (3, 2m), DOFs interleaved."""
    m = len(grads)
    B = np.zeros((3, 2 * m))
    B[0, 0::2] = grads[:, 0]
    B[1, 1::2] = grads[:, 1]
    B[2, 0::2] = grads[:, 1]
    B[2, 1::2] = grads[:, 0]
    return B


def smoothed_B(domain, mesh, cache=None):
    """Area-averaged strain-displacement matrix of one smoothing domain.

    ``cache`` may map element ids to the output of
    :func:`basis.element_gradients` to avoid recomputation.
    """
    col = {int(d): i for i, d in enumerate(domain.dof_map)}
    B = np.zeros((3, len(domain.dof_map)))
    for part in domain.parts:
        e = part.element
        if cache is not None and e in cache:
            areas, grads = cache[e]
        else:
            areas, grads = basis.element_gradients(mesh.nodes[mesh.elements[e]], element=e)
            if cache is not None:
                cache[e] = (areas, grads)
        j = part.sub_tri
        local = areas[j] * sym_grad(grads[j])
        idx = [col[int(d)] for d in element_dofs(mesh, e)]
        B[:, idx] += local
    return SmoothedOperator(B=B / domain.area, area=domain.area, dof_map=domain.dof_map)


def volumetric_and_deviatoric(op):
    """Rows giving the volume rate and the in-plane deviatoric pair.

    ``m_row . d`` is ``eps_11 + eps_22``; ``dev_rows . d`` is
    ``(eps_11 - eps_22, gamma_12)`` whose norm equals ``2 sqrt(J2)``.
    """
    B = op.B
    m_row = B[0] + B[1]
    dev = np.vstack([B[0] - B[1], B[2]])
    return m_row, dev


@dataclass
class StrainOperator:
    """All smoothed operators of a mesh stacked into one sparse matrix.

    ``B`` has shape (3 n_s, n_dofs); rows ``3k..3k+2`` belong to edge ``k``.
    """

    B: sp.csr_matrix
    areas: np.ndarray
    domains: list

    @property
    def n_s(self):
        return len(self.areas)

    def strains(self, d):
        """Smoothed strain per edge, shape (n_s, 3)."""
        return (self.B @ d).reshape(-1, 3)

    def volumetric(self):
        B = self.B
        return (B[0::3] + B[1::3]).tocsr()

    def deviatoric(self):
        """Rows ``2k, 2k+1`` are the deviatoric pair of edge ``k``."""
        B = self.B
        n = self.n_s
        top = (B[0::3] - B[1::3]).tocoo()
        bot = B[2::3].tocoo()
        rows = np.concatenate([2 * top.row, 2 * bot.row + 1])
        cols = np.concatenate([top.col, bot.col])
        vals = np.concatenate([top.data, bot.data])
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, B.shape[1]))


def assemble_operator(mesh, domains=None):
    """Build every smoothed operator of ``mesh`` (edges in id order)."""
    if domains is None:
        domains = build_domains(mesh)
    cache = {}
    rows, cols, vals = [], [], []
    for k, dom in enumerate(domains):
        op = smoothed_B(dom, mesh, cache)
        # entries that cancel analytically leave round-off behind; drop them
        r, c = np.nonzero(np.abs(op.B) > DROP_TOL * np.abs(op.B).max())
        rows.append(3 * k + r)
        cols.append(op.dof_map[c])
        vals.append(op.B[r, c])
    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(3 * len(domains), mesh.n_dofs))
    areas = np.array([d.area for d in domains])
    return StrainOperator(B=B, areas=areas, domains=domains)
