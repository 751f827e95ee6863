"""Piecewise-linear barycentric shape functions on convex polygons.

A polygon with ``n`` vertices (hanging nodes included) is mapped from the
regular reference ``n``-gon whose vertices sit on the unit circle.  Both are
fanned into ``n`` sub-triangles around their centre (the origin, resp. the
vertex mean).  On each sub-triangle the vertex functions are the linear
interpolants of the nodal values ``delta_ij`` at the polygon vertices and
``1/n`` at the centre; the bubble is the linear function that is 1 at the
centre and 0 on the polygon boundary.

Basis values are returned with ``n + 1`` entries: the ``n`` vertex
functions followed by the bubble.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# 3-point edge-midpoint rule on the reference triangle (area 1/2), exact for degree 2
GAUSS_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
GAUSS_WEIGHTS = np.full(3, 1.0 / 6.0)


class InvertedElementError(ValueError):
    def __init__(self, element, det):
        super().__init__(f"element {element} is inverted or degenerate (det J = {det:.3e})")
        self.element = element
        self.det = det


@dataclass(frozen=True)
class ReferencePolygon:
    n: int
    ref_vertices: np.ndarray
    gauss_bary: np.ndarray = GAUSS_BARY
    gauss_weights: np.ndarray = GAUSS_WEIGHTS

    def sub_triangle(self, j):
        """Vertices (centre, xi_j, xi_{j+1}) of reference sub-triangle ``j``."""
        return np.array([[0.0, 0.0], self.ref_vertices[j], self.ref_vertices[(j + 1) % self.n]])

    def gauss_points(self, j):
        """Reference coordinates of the Gauss points of sub-triangle ``j``."""
        return self.gauss_bary @ self.sub_triangle(j)


@lru_cache(maxsize=None)
def reference_polygon(n):
    """Regular ``n``-gon with vertex ``i`` (0-based) at angle ``2*pi*(i+1)/n``."""
    if n < 3:
        raise ValueError(f"a polygon needs at least 3 vertices, got {n}")
    ang = 2.0 * np.pi * np.arange(1, n + 1) / n
    verts = np.column_stack([np.cos(ang), np.sin(ang)])
    verts.setflags(write=False)
    return ReferencePolygon(n=n, ref_vertices=verts)


def vertex_nodal_values(n):
    """Nodal values of the vertex functions: identity at vertices, ``1/n`` at the centre.

    Row ``i`` is function ``i``; columns ``0..n-1`` are the vertices and
    column ``n`` is the centroid.
    """
    if n < 3:
        raise ValueError(f"a polygon needs at least 3 vertices, got {n}")
    phi = np.zeros((n, n + 1))
    phi[:, :n] = np.eye(n)
    phi[:, n] = 1.0 / n
    return phi


@dataclass
class BasisEval:
    N: np.ndarray
    grad_ref: np.ndarray
    sub_tri: int
    J: np.ndarray | None = None
    det_J: float | None = None
    grad_phys: np.ndarray | None = None
    x: np.ndarray | None = None


def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def signed_tri_area(tri):
    tri = np.asarray(tri, dtype=float)
    return 0.5 * _cross2(tri[1] - tri[0], tri[2] - tri[0])


def _tri_gradients(tri):
    """Gradients of the three linear functions of a triangle, shape (3, 2)."""
    T = np.array([tri[1] - tri[0], tri[2] - tri[0]]).T
    inv = np.linalg.inv(T)
    g = np.zeros((3, 2))
    g[1:] = inv
    g[0] = -inv.sum(axis=0)
    return g


def _barycentric(tri, p):
    # Cramer's rule: a vertex input reproduces its numerator bit for bit, so
    # vertex values come out exactly 0 or 1
    a = tri[1] - tri[0]
    b = tri[2] - tri[0]
    q = np.asarray(p, dtype=float) - tri[0]
    det = _cross2(a, b)
    l1 = _cross2(q, b) / det
    l2 = _cross2(a, q) / det
    return np.array([1.0 - l1 - l2, l1, l2])


def _expand(n, j, tri_vals):
    """Combine linear-triangle quantities (centre, a, b) into the n+1 basis entries."""
    out = np.zeros((n + 1,) + tri_vals.shape[1:])
    out[:n] = tri_vals[0] / n
    out[j] += tri_vals[1]
    out[(j + 1) % n] += tri_vals[2]
    out[n] = tri_vals[0]
    return out


def eval_reference(ref, xi, sub_tri, tol=1e-12):
    """Values and reference gradients of the ``n + 1`` basis functions at ``xi``."""
    tri = ref.sub_triangle(sub_tri)
    lam = _barycentric(tri, xi)
    if lam.min() < -tol:
        raise ValueError(f"point {tuple(xi)} lies outside reference sub-triangle {sub_tri}")
    N = _expand(ref.n, sub_tri, lam)
    grad = _expand(ref.n, sub_tri, _tri_gradients(tri))
    return BasisEval(N=N, grad_ref=grad, sub_tri=sub_tri)


def sub_triangle_jacobian(ref, coords, sub_tri):
    """Jacobian ``dx/dxi`` of the affine map of one sub-triangle (centre -> vertex mean)."""
    coords = np.asarray(coords, dtype=float)
    n = ref.n
    xc = coords.mean(axis=0)
    j = sub_tri
    X = np.array([coords[j] - xc, coords[(j + 1) % n] - xc]).T
    Xi = np.array([ref.ref_vertices[j], ref.ref_vertices[(j + 1) % n]]).T
    return X @ np.linalg.inv(Xi), xc


def bind_physical(ref_eval, coords, sub_tri=None, element=-1):
    """Attach the physical map of ``coords`` to a reference evaluation.

    The physical gradients are ``grad_ref @ inv(J)``, i.e. the chain rule
    ``dN/dx = dN/dxi . dxi/dx`` applied row-wise.
    """
    coords = np.asarray(coords, dtype=float)
    j = ref_eval.sub_tri if sub_tri is None else sub_tri
    n = len(coords)
    if len(ref_eval.N) != n + 1:
        raise ValueError("reference and physical polygons have different vertex counts")
    J, xc = sub_triangle_jacobian(reference_polygon(n), coords, j)
    det = float(np.linalg.det(J))
    if not det > 0.0:
        raise InvertedElementError(element, det)
    ref_eval.J = J
    ref_eval.det_J = det
    ref_eval.grad_phys = ref_eval.grad_ref @ np.linalg.inv(J)
    return ref_eval


def evaluate(coords, xi, sub_tri, element=-1):
    """Reference evaluation followed by :func:`bind_physical`, with the physical point."""
    ref = reference_polygon(len(coords))
    ev = bind_physical(eval_reference(ref, xi, sub_tri), coords, sub_tri, element)
    ev.x = np.asarray(coords, dtype=float).mean(axis=0) + ev.J @ np.asarray(xi, dtype=float)
    return ev


def locate(coords, x, tol=1e-12):
    """Sub-triangle index and reference coordinates of physical point ``x``."""
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    ref = reference_polygon(n)
    xc = coords.mean(axis=0)
    best = None
    for j in range(n):
        tri = np.array([xc, coords[j], coords[(j + 1) % n]])
        lam = _barycentric(tri, x)
        if best is None or lam.min() > best[1].min():
            best = (j, lam)
        if lam.min() >= -tol:
            break
    j, lam = best
    return j, lam @ ref.sub_triangle(j)


def shape_functions(coords, x):
    """Values of the ``n + 1`` basis functions at physical point ``x`` (brute-force route).

    Used as an independent check of the reference-map route.
    """
    j, xi = locate(coords, x)
    return eval_reference(reference_polygon(len(coords)), xi, j, tol=1e-9).N


def element_gradients(coords, element=-1):
    """Constant physical gradients on every sub-triangle.

    Returns ``(areas, grads)`` with ``areas`` of shape (n,) and ``grads`` of
    shape (n, n+1, 2), where ``grads[j]`` holds the gradients of all basis
    functions on sub-triangle ``j``.
    """
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    ref = reference_polygon(n)
    areas = np.empty(n)
    grads = np.empty((n, n + 1, 2))
    for j in range(n):
        xi = ref.sub_triangle(j).mean(axis=0)
        ev = bind_physical(eval_reference(ref, xi, j), coords, j, element)
        # ref sub-triangle area times det J
        areas[j] = 0.5 * abs(_cross2(ref.ref_vertices[j], ref.ref_vertices[(j + 1) % n])) * ev.det_J
        grads[j] = ev.grad_phys
    return areas, grads


def element_quadrature(coords, element=-1):
    """Gauss rule over a polygon: 3 points per sub-triangle.

    Returns ``(points, weights, N)`` with physical points (3n, 2), weights
    (3n,) and basis values (3n, n+1).  Weights are
    ``det(J_xi) * det(J_eta) * w_eta``.
    """
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    ref = reference_polygon(n)
    pts, wts, vals = [], [], []
    for j in range(n):
        det_eta = abs(_cross2(ref.ref_vertices[j], ref.ref_vertices[(j + 1) % n]))
        for xi, w in zip(ref.gauss_points(j), ref.gauss_weights):
            ev = evaluate(coords, xi, j, element)
            pts.append(ev.x)
            wts.append(ev.det_J * det_eta * w)
            vals.append(ev.N)
    return np.array(pts), np.array(wts), np.array(vals)
