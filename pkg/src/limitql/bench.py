"""Built-in benchmark problems with reference collapse values."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import (Circle, DomainSpec, MeshError, build_initial, coons_quads, mapped_quads,
                   structured_quads)
from .problem import LoadCase, MaterialModel


@dataclass(frozen=True)
class Reference:
    source: str
    alpha: float | None = None
    bracket: tuple | None = None

    def relative_error(self, value):
        if self.alpha is None:
            return float("nan")
        return abs(value - self.alpha) / abs(self.alpha)

    def to_dict(self):
        out = {"source": self.source}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.bracket is not None:
            out["bracket"] = list(self.bracket)
        return out


@dataclass
class Benchmark:
    name: str
    domain: DomainSpec
    material: MaterialModel
    load: LoadCase
    references: list = field(default_factory=list)
    notes: str = ""

    def forest(self, max_level=None):
        groups = sorted(set(self.load.tractions) | set(self.load.dirichlet))
        kw = {} if max_level is None else {"max_level": max_level}
        return build_initial(self.domain, required_groups=groups, **kw)

    @property
    def primary_reference(self):
        for r in self.references:
            if r.alpha is not None:
                return r
        return self.references[0] if self.references else None


def prandtl(phi_degrees):
    """Bearing capacity factor of a smooth strip footing on weightless soil."""
    if phi_degrees == 0.0:
        return 2.0 + math.pi
    p = math.radians(phi_degrees)
    return (math.exp(math.pi * math.tan(p)) * math.tan(0.25 * math.pi + 0.5 * p) ** 2 - 1.0) / math.tan(p)


# (phi, L/B, H/B, initial spacing/B) of the two anchor models.  The phi = 35
# anchor is the 13 x 10 grid whose first column is the half footing.
FOOTING_ANCHORS = ((0.0, 2.5, 1.0, 0.25), (35.0, 6.5, 5.0, 0.5))


def _footing_geometry(phi_degrees):
    """Half-domain size and initial spacing, interpolated between the two anchors."""
    (p0, l0, h0, s0), (p1, l1, h1, s1) = FOOTING_ANCHORS
    t = (min(max(phi_degrees, p0), p1) - p0) / (p1 - p0)
    return l0 + (l1 - l0) * t, h0 + (h1 - h0) * t, s0 + (s1 - s0) * t


def footing(phi_degrees=0.0, c=1.0, q=1.0, nx=None, ny=None):
    """Smooth strip footing of width B = 1 on weightless soil (half model).

    The cut ``x = 0`` is a roller, the base and the far side are fixed, and
    the footing ``0 <= x <= B/2`` on the top surface carries a uniform
    vertical traction ``q``.  ``nx``/``ny`` override the initial grid (the
    footing edge is always a grid line).
    """
    if not 0.0 <= phi_degrees < 90.0:
        raise ValueError(f"friction angle must be in [0, 90) degrees, got {phi_degrees}")
    half = 0.5
    length, height, h = _footing_geometry(phi_degrees)
    if nx is None:
        n_foot = max(1, int(round(half / h)))
        n_rest = int(math.ceil((length - half) / h - 1e-9))
    else:
        n_foot = max(1, int(round(nx * half / length)))
        n_rest = nx - n_foot
    if ny is None:
        ny = int(math.ceil(height / h - 1e-9))
    xs = np.concatenate([np.linspace(0.0, half, n_foot + 1), np.linspace(half, length, n_rest + 1)[1:]])
    ys = np.linspace(0.0, height, ny + 1)
    nodes, quads, sides = structured_quads(xs, ys)
    top = sides["top"]
    foot = [p for p in top if max(nodes[p[0], 0], nodes[p[1], 0]) <= half + 1e-12]
    surface = [p for p in top if max(nodes[p[0], 0], nodes[p[1], 0]) > half + 1e-12]
    boundary = {"symmetry": sides["left"], "base": sides["bottom"], "far": sides["right"],
                "footing": foot, "surface": surface}
    load = LoadCase(tractions={"footing": (0.0, -q)},
                    dirichlet={"symmetry": (0.0, None), "base": (0.0, 0.0), "far": (0.0, 0.0)})
    refs = [Reference("Prandtl closed form", alpha=prandtl(phi_degrees) * c / q)]
    return Benchmark(name="footing", domain=DomainSpec(nodes, quads, boundary),
                     material=MaterialModel.mohr_coulomb(c, phi_degrees), load=load,
                     references=refs,
                     notes=f"half model L={length:g}, H={height:g}, {len(xs) - 1}x{ny} initial grid")


SLOPE_REFERENCES = {
    20.0: [Reference("present method, finest adaptive mesh", alpha=8.266),
           Reference("static/kinematic bracket", bracket=(8.21, 8.45))],
    35.0: [Reference("present method, finest adaptive mesh", alpha=13.984),
           Reference("static/kinematic bracket", bracket=(13.75, 14.19))],
}


def slope(phi_degrees=20.0, c=1.0, gamma=1.0, height=1.0, beta_degrees=70.0, behind=2.0, nx=12, ny=4):
    """Homogeneous slope of height H loaded by self weight.

    The domain is the trapezoid with toe ``(0, 0)``, crest
    ``(H / tan(beta), H)`` and a crest plateau of length ``behind * H``.
    Base and back face are fixed; the slope face and crest are free.  With
    ``c = H = 1`` the collapse factor is the stability number ``gamma H / c``.
    """
    x_crest = height / math.tan(math.radians(beta_degrees))
    width = x_crest + behind * height
    corners = [(0.0, 0.0), (width, 0.0), (width, height), (x_crest, height)]
    nodes, quads, sides = mapped_quads(corners, nx, ny)
    boundary = {"base": sides["bottom"], "back": sides["right"], "crest": sides["top"],
                "face": sides["left"]}
    load = LoadCase(body_force=(0.0, -gamma), dirichlet={"base": (0.0, 0.0), "back": (0.0, 0.0)})
    refs = list(SLOPE_REFERENCES.get(float(phi_degrees), []))
    return Benchmark(name="slope", domain=DomainSpec(nodes, quads, boundary),
                     material=MaterialModel.mohr_coulomb(c, phi_degrees), load=load, references=refs,
                     notes=f"{beta_degrees:g} degree slope, plateau {behind:g}H")


TWO_HOLE_REFERENCES = {
    0.0: [Reference("present method, finest adaptive mesh", alpha=1.814),
          Reference("static/kinematic bracket", bracket=(1.8089, 1.825))],
    30.0: [Reference("present method, finest adaptive mesh", alpha=1.059),
           Reference("static/kinematic bracket", bracket=(1.0562, 1.063))],
}


def _line(p, q, n):
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return (1.0 - t) * np.asarray(p, dtype=float) + t * np.asarray(q, dtype=float)


def _arc(center, radius, a0, a1, n):
    ang = np.linspace(a0, a1, n + 1)
    return np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(ang), np.sin(ang)])


def two_holes(phi_degrees=0.0, c=1.0, q=1.0, half_width=10.0, half_height=18.0, hole_x=5.0,
              radius=1.0, n_arc=2, n_ring=2, n_up=6):
    """Block with two circular holes on its mid-height line, pulled at both ends.

    The full block is ``2 half_width x 2 half_height`` with holes of
    ``radius`` centred at ``(+-hole_x, 0)``; the quarter ``x >= 0, y >= 0``
    is modelled with rollers on both symmetry lines.  The end ``y =
    half_height`` carries the tension ``q`` and the side ``x = half_width``
    is free.  Each hole is meshed by a half O-grid whose hole nodes are
    snapped to the circle.

    ``n_arc`` is the number of cells per 45 degrees of arc, ``n_ring`` the
    radial cells of the O-grid and ``n_up`` the rows above it.
    """
    if not radius > 0.0:
        raise MeshError(f"hole radius must be positive, got {radius}")
    a = 2.0 * radius
    if not (a < hole_x and hole_x + a < half_width and a < half_height):
        raise MeshError("holes do not fit inside the block")
    ctr = np.array([hole_x, 0.0])
    k, nr = int(n_arc), int(n_ring)
    x0, x1 = hole_x - a, hole_x + a
    h = a / k
    n_left = max(1, int(round(x0 / h)))
    n_right = max(1, int(round((half_width - x1) / h)))

    blocks = []
    quarter = 0.25 * math.pi
    # half O-grid: radial direction is s, angular direction is t
    outer = [_line((x1, 0.0), (x1, a), k), _line((x1, a), (x0, a), 2 * k), _line((x0, a), (x0, 0.0), k)]
    spans = [(0.0, quarter, k), (quarter, 3 * quarter, 2 * k), (3 * quarter, math.pi, k)]
    for (a0, a1, n), out in zip(spans, outer):
        arc = _arc(ctr, radius, a0, a1, n)
        blocks.append(("ring", coons_quads(_line(arc[0], out[0], nr), out, _line(arc[-1], out[-1], nr), arc)))
    blocks.append(("left", structured_quads(np.linspace(0.0, x0, n_left + 1), np.linspace(0.0, a, k + 1))))
    blocks.append(("right", structured_quads(np.linspace(x1, half_width, n_right + 1),
                                             np.linspace(0.0, a, k + 1))))
    xs = np.concatenate([np.linspace(0.0, x0, n_left + 1), np.linspace(x0, x1, 2 * k + 1)[1:],
                         np.linspace(x1, half_width, n_right + 1)[1:]])
    blocks.append(("upper", structured_quads(xs, np.linspace(a, half_height, n_up + 1))))

    nodes, quads = [], []
    boundary = {"hole": [], "sym_x": [], "sym_y": [], "end": [], "side": []}
    off = 0
    for name, (pts, qd, sides) in blocks:
        nodes.append(pts)
        quads.append(qd + off)

        def put(group, pairs):
            boundary[group].extend((i + off, j + off) for i, j in pairs)

        if name == "ring":
            put("hole", sides["left"])
        elif name == "left":
            put("sym_x", sides["left"])
            put("sym_y", sides["bottom"])
        elif name == "right":
            put("side", sides["right"])
            put("sym_y", sides["bottom"])
        else:
            put("sym_x", sides["left"])
            put("side", sides["right"])
            put("end", sides["top"])
        off += len(pts)
    # the two outer ring blocks touch the symmetry line y = 0 with their radial side
    ring_sides = [blocks[0][1][2]["bottom"], blocks[2][1][2]["top"]]
    starts = [0, len(blocks[0][1][0]) + len(blocks[1][1][0])]
    for pairs, st in zip(ring_sides, starts):
        boundary["sym_y"].extend((i + st, j + st) for i, j in pairs)
    load = LoadCase(tractions={"end": (0.0, q)},
                    dirichlet={"sym_x": (0.0, None), "sym_y": (None, 0.0)})
    refs = list(TWO_HOLE_REFERENCES.get(float(phi_degrees), []))
    return Benchmark(name="two_holes",
                     domain=DomainSpec(np.vstack(nodes), np.vstack(quads), boundary,
                                       snap={"hole": Circle((hole_x, 0.0), radius)}),
                     material=MaterialModel.mohr_coulomb(c, phi_degrees), load=load, references=refs,
                     notes=f"quarter model, block {2 * half_width:g} x {2 * half_height:g}, "
                           f"holes r={radius:g} at (+-{hole_x:g}, 0)")
