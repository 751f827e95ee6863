"""Quadtree refinement over an initial quadrilateral mesh.

The forest keeps the refinement hierarchy.  At any time it can be flattened
into a :class:`ConformingMesh` in which every hanging node is promoted to an
ordinary vertex of the coarser neighbour, so a quadrilateral with side nodes
becomes a convex polygon with ``4 + n_hanging`` vertices.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

UNTAGGED = "untagged"
DEFAULT_MAX_LEVEL = 30


class MeshError(ValueError):
    """Invalid geometry or refinement request."""


@dataclass(frozen=True)
class Circle:
    """Circular boundary used to snap new boundary nodes (radial projection)."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0.0:
            raise MeshError(f"circle radius must be positive, got {self.radius}")

    def project(self, p):
        c = np.asarray(self.center, dtype=float)
        v = np.asarray(p, dtype=float) - c
        r = np.hypot(v[0], v[1])
        if r == 0.0:
            raise MeshError("cannot project the circle centre onto the circle")
        return c + v * (self.radius / r)

    def residual(self, p):
        c = np.asarray(self.center, dtype=float)
        return float(np.hypot(*(np.asarray(p, dtype=float) - c)) - self.radius)


@dataclass
class DomainSpec:
    """Initial quadrilateral mesh plus named boundary groups.

    ``boundary`` maps a group name to node pairs that are sides of the
    initial quads; ``snap`` maps a group name to a :class:`Circle` onto which
    nodes of that group are projected.
    """

    nodes: np.ndarray
    quads: np.ndarray
    boundary: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    snap: dict[str, Circle] = field(default_factory=dict)


def signed_area(points):
    """Shoelace area of a polygon given as an (n, 2) array (positive if CCW)."""
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _is_convex_ccw(points, rtol=1e-12):
    p = np.asarray(points, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    scale = np.max(np.sum(e * e, axis=1))
    return signed_area(p) > 0.0 and bool(np.all(cross > -rtol * scale))


def _key(a, b):
    return (a, b) if a < b else (b, a)


class QuadtreeForest:
    """Refinement hierarchy over the roots of a :class:`DomainSpec`.

    Cells are stored in flat parallel lists indexed by cell id.  Corner ids
    are counter-clockwise; side ``s`` joins corners ``s`` and ``s + 1``.
    """

    def __init__(self, nodes, roots_corners, side_tags, snap=None,
                 max_level=DEFAULT_MAX_LEVEL):
        self.nodes = [tuple(map(float, p)) for p in nodes]
        self.snap = dict(snap or {})
        self.max_level = int(max_level)
        self.parent = []
        self.children = []
        self.corners = []
        self.level = []
        self.side_tags = []
        self.midpoints = {}
        self.roots = []
        for quad, tags in zip(roots_corners, side_tags):
            self.roots.append(self._add_cell(None, tuple(int(i) for i in quad), 0, tuple(tags)))

    def _add_cell(self, parent, corners, level, tags):
        self.parent.append(parent)
        self.children.append(None)
        self.corners.append(corners)
        self.level.append(level)
        self.side_tags.append(tags)
        return len(self.corners) - 1

    @property
    def n_cells(self):
        return len(self.corners)

    @property
    def boundary_groups(self):
        return sorted({t for tags in self.side_tags for t in tags if t is not None})

    def is_leaf(self, cell):
        return self.children[cell] is None

    def leaves(self):
        return [c for c in range(self.n_cells) if self.children[c] is None]

    def coords(self, ids):
        return np.array([self.nodes[i] for i in ids])

    def cell_area(self, cell):
        return signed_area(self.coords(self.corners[cell]))

    def copy(self):
        return copy.deepcopy(self)

    def _midpoint(self, a, b, tag):
        k = _key(a, b)
        m = self.midpoints.get(k)
        if m is None:
            p = 0.5 * (np.asarray(self.nodes[a]) + np.asarray(self.nodes[b]))
            rule = self.snap.get(tag) if tag is not None else None
            if rule is not None:
                p = rule.project(p)
            self.nodes.append((float(p[0]), float(p[1])))
            m = len(self.nodes) - 1
            self.midpoints[k] = m
        return m

    def _split(self, cell):
        c = self.corners[cell]
        tags = self.side_tags[cell]
        m = [self._midpoint(c[s], c[(s + 1) % 4], tags[s]) for s in range(4)]
        centre = self.coords(c).mean(axis=0)
        self.nodes.append((float(centre[0]), float(centre[1])))
        ctr = len(self.nodes) - 1
        # child j keeps parent corner j; its sides j and j-1 lie on the parent's sides
        quads = [
            (c[0], m[0], ctr, m[3]),
            (m[0], c[1], m[1], ctr),
            (ctr, m[1], c[2], m[2]),
            (m[3], ctr, m[2], c[3]),
        ]
        kids = []
        for j, q in enumerate(quads):
            t = tuple(tags[s] if s in (j, (j - 1) % 4) else None for s in range(4))
            if not _is_convex_ccw(self.coords(q)):
                raise MeshError(f"refinement of cell {cell} produced a non-convex child")
            kids.append(self._add_cell(cell, q, self.level[cell] + 1, t))
        self.children[cell] = tuple(kids)

    def refine(self, marked):
        """Subdivide every marked leaf into four children, in place.

        Cells already at ``max_level`` are left unrefined (logged).  Returns
        ``self`` for chaining.
        """
        marked = sorted(set(int(c) for c in marked))
        for cell in marked:
            if not 0 <= cell < self.n_cells:
                raise MeshError(f"cell {cell} does not exist")
            if self.children[cell] is not None:
                raise MeshError(f"cell {cell} is internal and cannot be refined")
        skipped = 0
        for cell in marked:
            if self.level[cell] >= self.max_level:
                skipped += 1
                continue
            self._split(cell)
        if skipped:
            log.warning("%d cells at max level %d were not refined", skipped, self.max_level)
        return self

    def side_chain(self, a, b):
        """Nodes along side ``a -> b`` including ``a`` and all hanging nodes, excluding ``b``."""
        m = self.midpoints.get(_key(a, b))
        if m is None:
            return [a]
        return self.side_chain(a, m) + self.side_chain(m, b)


def refine(forest, marked):
    """Return a refined copy of ``forest``; the input is left untouched."""
    return forest.copy().refine(marked)


def build_initial(domain, required_groups=(), max_level=DEFAULT_MAX_LEVEL):
    """Create a level-0 forest from a :class:`DomainSpec`.

    Nodes closer than ``1e-9`` times the bounding-box diagonal are merged.
    Boundary sides that carry no tag get the group ``"untagged"``.
    """
    pts = np.asarray(domain.nodes, dtype=float)
    quads = np.asarray(domain.quads, dtype=int)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise MeshError("nodes must be a non-empty (n, 2) array")
    if quads.ndim != 2 or quads.shape[1] != 4 or len(quads) == 0:
        raise MeshError("quads must be a non-empty (m, 4) array")
    if quads.min() < 0 or quads.max() >= len(pts):
        raise MeshError("quad refers to a missing node")

    diag = float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))
    tol = 1e-9 * diag
    remap = np.arange(len(pts))
    tree = cKDTree(pts)
    for i, j in sorted(tree.query_pairs(tol)):
        ri, rj = remap[i], remap[j]
        if ri != rj:
            lo, hi = min(ri, rj), max(ri, rj)
            remap[remap == hi] = lo
    used = np.unique(remap)
    compact = -np.ones(len(pts), dtype=int)
    compact[used] = np.arange(len(used))
    remap = compact[remap]
    nodes = pts[used].copy()
    quads = remap[quads]

    for q, quad in enumerate(quads):
        if len(set(quad.tolist())) != 4 or not _is_convex_ccw(nodes[quad]):
            raise MeshError(f"initial quad {q} is not convex and counter-clockwise")

    side_count = {}
    for quad in quads:
        for s in range(4):
            k = _key(int(quad[s]), int(quad[(s + 1) % 4]))
            side_count[k] = side_count.get(k, 0) + 1
    if any(v > 2 for v in side_count.values()):
        raise MeshError("a side is shared by more than two initial quads")

    tag_of = {}
    for tag, pairs in domain.boundary.items():
        if tag == UNTAGGED:
            raise MeshError(f"'{UNTAGGED}' is a reserved group name")
        for a, b in pairs:
            k = _key(int(remap[a]), int(remap[b]))
            if side_count.get(k) != 1:
                raise MeshError(f"edge ({a}, {b}) of group '{tag}' is not a boundary side")
            if k in tag_of and tag_of[k] != tag:
                raise MeshError(f"edge ({a}, {b}) is tagged both '{tag_of[k]}' and '{tag}'")
            tag_of[k] = tag

    missing = [g for g in required_groups if g not in domain.boundary or not domain.boundary[g]]
    if missing:
        raise MeshError(f"boundary groups referenced but not defined: {missing}")
    for g in domain.snap:
        if g not in domain.boundary:
            raise MeshError(f"snap rule given for unknown group '{g}'")

    side_tags = []
    for quad in quads:
        tags = []
        for s in range(4):
            k = _key(int(quad[s]), int(quad[(s + 1) % 4]))
            tags.append(tag_of.get(k, UNTAGGED) if side_count[k] == 1 else None)
        side_tags.append(tags)

    for tag, rule in domain.snap.items():
        for a, b in domain.boundary[tag]:
            for n in (remap[a], remap[b]):
                nodes[n] = rule.project(nodes[n])

    return QuadtreeForest(nodes, quads, side_tags, snap=domain.snap, max_level=max_level)


@dataclass
class ConformingMesh:
    """Flat polygonal view of a forest.

    ``edge_elements[k]`` holds the one or two incident elements (``-1`` pads)
    and ``edge_local[k]`` the position of edge ``k`` inside each of them, so
    that element edge ``j`` runs from vertex ``j`` to vertex ``j + 1``.
    """

    nodes: np.ndarray
    elements: list
    edges: np.ndarray
    edge_elements: np.ndarray
    edge_local: np.ndarray
    edge_tags: list
    element_edges: list
    areas: np.ndarray
    cells: np.ndarray | None = None

    @classmethod
    def from_polygons(cls, nodes, elements, boundary_tags, cells=None):
        """Build edges and adjacency from CCW polygons.

        ``boundary_tags`` maps sorted node pairs to group names; edges with a
        single incident element and no entry get ``"untagged"``.
        """
        nodes = np.asarray(nodes, dtype=float)
        elements = [np.asarray(e, dtype=int) for e in elements]
        index = {}
        edges, inc, loc = [], [], []
        element_edges = []
        for e, poly in enumerate(elements):
            n = len(poly)
            ids = np.empty(n, dtype=int)
            for j in range(n):
                a, b = int(poly[j]), int(poly[(j + 1) % n])
                k = _key(a, b)
                kid = index.get(k)
                if kid is None:
                    kid = len(edges)
                    index[k] = kid
                    edges.append((a, b))
                    inc.append([e, -1])
                    loc.append([j, -1])
                else:
                    if inc[kid][1] != -1:
                        raise MeshError(f"edge {k} has more than two incident elements")
                    inc[kid][1] = e
                    loc[kid][1] = j
                ids[j] = kid
            element_edges.append(ids)
        tags = []
        for kid, (a, b) in enumerate(edges):
            if inc[kid][1] == -1:
                tags.append(boundary_tags.get(_key(a, b), UNTAGGED))
            else:
                tags.append(None)
        areas = np.array([signed_area(nodes[p]) for p in elements])
        return cls(
            nodes=nodes,
            elements=elements,
            edges=np.array(edges, dtype=int).reshape(-1, 2),
            edge_elements=np.array(inc, dtype=int).reshape(-1, 2),
            edge_local=np.array(loc, dtype=int).reshape(-1, 2),
            edge_tags=tags,
            element_edges=element_edges,
            areas=areas,
            cells=None if cells is None else np.asarray(cells, dtype=int),
        )

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_dofs(self):
        """Two velocity components per vertex node and per element bubble."""
        return 2 * (self.n_nodes + self.n_elements)

    def bubble_dof(self, element):
        return 2 * (self.n_nodes + element)

    @property
    def total_area(self):
        return float(np.sum(self.areas))

    def centroid(self, element):
        """Vertex mean of an element (the bubble node / fan centre)."""
        return self.nodes[self.elements[element]].mean(axis=0)

    def boundary_groups(self):
        return sorted({t for t in self.edge_tags if t is not None})

    def boundary_edges(self, tag):
        return np.array([k for k, t in enumerate(self.edge_tags) if t == tag], dtype=int)

    def boundary_nodes(self, tag):
        ids = self.boundary_edges(tag)
        return np.unique(self.edges[ids].ravel()) if len(ids) else np.zeros(0, dtype=int)

    def boundary_pairs(self):
        """Group name -> list of sorted node pairs, for export."""
        out = {}
        for k, t in enumerate(self.edge_tags):
            if t is not None:
                a, b = self.edges[k]
                out.setdefault(t, []).append(list(_key(int(a), int(b))))
        return {t: out[t] for t in sorted(out)}

    def hanging_count(self, element):
        return len(self.elements[element]) - 4

    def check(self):
        """Raise :class:`MeshError` unless the mesh is watertight and positively oriented."""
        for k in range(self.n_edges):
            two = self.edge_elements[k, 1] != -1
            if two != (self.edge_tags[k] is None):
                raise MeshError(f"edge {k} breaks watertightness")
        bad = np.flatnonzero(self.areas <= 0.0)
        if len(bad):
            raise MeshError(f"element {int(bad[0])} has non-positive area")


def extract_conforming(forest):
    """Flatten the leaves of ``forest`` into a :class:`ConformingMesh`.

    Each leaf becomes a CCW polygon made of its four corners plus every
    hanging node lying on its sides; a side split by hanging nodes therefore
    contributes several edges.
    """
    leaves = forest.leaves()
    elements = []
    tags = {}
    for cell in leaves:
        c = forest.corners[cell]
        st = forest.side_tags[cell]
        poly = []
        for s in range(4):
            a, b = c[s], c[(s + 1) % 4]
            chain = forest.side_chain(a, b)
            if st[s] is not None:
                ends = chain + [b]
                for u, v in zip(ends[:-1], ends[1:]):
                    tags[_key(u, v)] = st[s]
            poly.extend(chain)
        elements.append(poly)
    return ConformingMesh.from_polygons(np.array(forest.nodes), elements, tags, cells=leaves)


def structured_quads(xs, ys):
    """Tensor grid on coordinates ``xs`` x ``ys``.

    Returns ``(nodes, quads, sides)`` where ``sides`` maps ``"bottom"``,
    ``"right"``, ``"top"``, ``"left"`` to lists of boundary node pairs.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    quads = [(nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
             for j in range(ny) for i in range(nx)]
    sides = {
        "bottom": [(nid(i, 0), nid(i + 1, 0)) for i in range(nx)],
        "right": [(nid(nx, j), nid(nx, j + 1)) for j in range(ny)],
        "top": [(nid(i + 1, ny), nid(i, ny)) for i in range(nx)],
        "left": [(nid(0, j + 1), nid(0, j)) for j in range(ny)],
    }
    return nodes, np.array(quads, dtype=int), sides


def mapped_quads(corners, nx, ny):
    """Bilinear mapped grid of ``nx`` x ``ny`` quads over a convex quadrilateral.

    ``corners`` are given CCW starting at the parametric origin.  Side names
    follow :func:`structured_quads`.
    """
    c = np.asarray(corners, dtype=float)
    nodes, quads, sides = structured_quads(np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1))
    s, t = nodes[:, 0:1], nodes[:, 1:2]
    mapped = ((1 - s) * (1 - t) * c[0] + s * (1 - t) * c[1]
              + s * t * c[2] + (1 - s) * t * c[3])
    return mapped, quads, sides


def coons_quads(bottom, right, top, left):
    """Transfinite (Coons) grid spanned by four boundary point lists.

    ``bottom`` and ``top`` run in the +s direction with ``nx + 1`` points,
    ``left`` and ``right`` in the +t direction with ``ny + 1`` points; the
    corners must agree.  Side names follow :func:`structured_quads`.
    """
    B, R, T, L = (np.asarray(a, dtype=float) for a in (bottom, right, top, left))
    nx, ny = len(B) - 1, len(L) - 1
    if len(T) != nx + 1 or len(R) != ny + 1:
        raise MeshError("opposite sides of a Coons block need equal point counts")
    for p, q in ((B[0], L[0]), (B[-1], R[0]), (T[0], L[-1]), (T[-1], R[-1])):
        if np.hypot(*(p - q)) > 1e-12 * (1.0 + np.abs(p).max()):
            raise MeshError("Coons block corners do not match")
    nodes, quads, sides = structured_quads(np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1))
    i = np.rint(nodes[:, 0] * nx).astype(int)
    j = np.rint(nodes[:, 1] * ny).astype(int)
    s, t = nodes[:, 0:1], nodes[:, 1:2]
    pts = ((1 - t) * B[i] + t * T[i] + (1 - s) * L[j] + s * R[j]
           - ((1 - s) * (1 - t) * B[0] + s * (1 - t) * B[-1] + (1 - s) * t * T[0] + s * t * T[-1]))
    return pts, quads, sides
