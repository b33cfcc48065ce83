"""Coarse-graining of a finite open cluster into cubes of side t.

Cubes are closed: ``B_t(u) = prod [t u_i, t u_i + t]``, so neighbouring cubes
share faces. The construction finds the cubes on the exterior boundary of
the cluster, the enclosed "ponds" of cubes far from the cluster, decides
which ponds are reachable by open paths from the outer surface (live), and
assembles the cube set Gamma whose closed edges separate the box from the
window boundary.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .capacity import CapacityField
from .cluster import inner_boundary, open_cluster, outside_reach
from .cutset import component_labels, is_connected, l_neighbours, reachable
from .errors import InfiniteClusterError, InvalidSpecError, LatticeRangeError
from .flow import solve_max_flow
from .lattice import L_MODE, Z_MODE, AmbientWindow, BoxSpec, Grid, build_box, neighbourhood_structure

DEFAULT_T = 4

EXTERIOR = "exterior"
POND_BOUNDARY = "pond_boundary"
S_CUBE = "s"
POND = "pond"
BOUNDARY = "boundary"
INTERIOR = "interior"
OTHER = "other"
CLASS_ORDER = (EXTERIOR, POND_BOUNDARY, S_CUBE, POND, BOUNDARY, INTERIOR, OTHER)


def pad_box(box: BoxSpec, t: int) -> BoxSpec:
    """Smallest box containing ``box`` whose sides are multiples of t."""
    up = lambda x: -(-x // t) * t
    return build_box(box.d, tuple(up(k) for k in box.k), up(box.m))


def renorm_window(box: BoxSpec, t: int, margin: int) -> AmbientWindow:
    """Window around the box with the margin rounded up to a multiple of t."""
    return AmbientWindow(box, -(-margin // t) * t)


class CubeGrid:
    """Cubes of side t tiling an aligned vertex grid."""

    def __init__(self, grid: Grid, t: int) -> None:
        if t < 1:
            raise InvalidSpecError("cube scale must be at least 1")
        if any(l % t or h % t for l, h in zip(grid.lo, grid.hi)):
            raise InvalidSpecError(f"window {grid.lo}..{grid.hi} is not aligned to t={t}")
        self.grid = grid
        self.t = t
        self.d = grid.d
        self.first = tuple(l // t for l in grid.lo)
        self.shape = tuple((h - l) // t for l, h in zip(grid.lo, grid.hi))
        if min(self.shape) < 3:
            raise InvalidSpecError("window too small for cube decomposition")

    def index(self, rel: tuple[int, ...]) -> tuple[int, ...]:
        """Absolute cube index u of an array position."""
        return tuple(r + f for r, f in zip(rel, self.first))

    def position(self, u: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(x - f for x, f in zip(u, self.first))

    def touching(self, vertex_mask: np.ndarray) -> np.ndarray:
        """Cubes whose closed vertex set meets the vertex set."""
        acc = self.grid.nd(np.asarray(vertex_mask, dtype=bool))
        t = self.t
        for a in range(self.d):
            n = acc.shape[a]
            out = np.zeros_like(acc)
            for j in range(t + 1):
                src = [slice(None)] * self.d
                dst = [slice(None)] * self.d
                src[a] = slice(j, n)
                dst[a] = slice(0, n - j)
                out[tuple(dst)] |= acc[tuple(src)]
            acc = out
        return acc[tuple(slice(0, nc * t, t) for nc in self.shape)].copy()

    def vertices(self, cube_mask: np.ndarray) -> np.ndarray:
        """Union of the closed vertex sets of the cubes in the mask (flat vertex mask)."""
        cube_mask = np.asarray(cube_mask, dtype=bool)
        choices = []
        for a in range(self.d):
            x = np.arange(self.grid.shape[a])
            first = np.minimum(x // self.t, self.shape[a] - 1)
            second = np.where((x % self.t == 0) & (x > 0), x // self.t - 1, first)
            choices.append((first, second))
        out = np.zeros(self.grid.shape, dtype=bool)
        for combo in itertools.product((0, 1), repeat=self.d):
            out |= cube_mask[np.ix_(*(choices[a][c] for a, c in enumerate(combo)))]
        return out.ravel()

    @property
    def outer_layer(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for a in range(self.d):
            sl = [slice(None)] * self.d
            sl[a] = 0
            m[tuple(sl)] = True
            sl[a] = -1
            m[tuple(sl)] = True
        return m

    def reach_outer(self, blocked: np.ndarray) -> np.ndarray:
        """Cubes joined to the outer layer by Z^d cube paths avoiding ``blocked``."""
        labels, _ = ndimage.label(~blocked, structure=neighbourhood_structure(self.d, Z_MODE))
        hit = np.unique(labels[self.outer_layer & (labels > 0)])
        return np.isin(labels, hit) & (labels > 0)

    def dilate(self, cube_mask: np.ndarray, mode: str) -> np.ndarray:
        return ndimage.binary_dilation(cube_mask, structure=neighbourhood_structure(self.d, mode))


@dataclass(eq=False)
class Pond:
    cubes: np.ndarray
    exterior: np.ndarray
    vertices: np.ndarray
    inner_boundary: np.ndarray
    live: bool = False


@dataclass(eq=False)
class RenormDecomposition:
    t: int
    box: BoxSpec
    cubes: CubeGrid
    cluster: np.ndarray
    partial: np.ndarray
    partial_i: np.ndarray
    c_cubes: np.ndarray
    boundary_cubes: np.ndarray
    exterior_cubes: np.ndarray
    inside_cubes: np.ndarray
    pond_cubes: np.ndarray
    ponds: list[Pond]
    surface: np.ndarray
    s_prime: np.ndarray
    s_vertices: np.ndarray
    s_cubes: np.ndarray
    gamma: np.ndarray
    per_cube_property: dict = dc_field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.cubes.grid

    def gamma_cubes(self) -> list[tuple[int, ...]]:
        return [self.cubes.index(tuple(p)) for p in np.argwhere(self.gamma)]

    def classes(self) -> np.ndarray:
        """Per-cube class label, resolving overlaps by CLASS_ORDER precedence."""
        pond_bd = np.zeros(self.cubes.shape, dtype=bool)
        for p in self.ponds:
            if p.live:
                pond_bd |= p.exterior
        out = np.full(self.cubes.shape, OTHER, dtype=object)
        layers = [
            (self.c_cubes, INTERIOR), (self.boundary_cubes, BOUNDARY), (self.pond_cubes, POND),
            (self.s_cubes, S_CUBE), (pond_bd, POND_BOUNDARY), (self.exterior_cubes, EXTERIOR),
        ]
        for mask, name in layers:
            out[mask] = name
        return out

    def invariants(self) -> dict[str, bool]:
        g = self.grid
        live_vertices = np.zeros(g.n_vertices, dtype=bool)
        for p in self.ponds:
            if p.live:
                live_vertices |= p.vertices
        touched = self.cubes.touching(self.cluster | self.partial)
        return {
            "gamma_in_boundary": bool(not (self.gamma & ~self.boundary_cubes).any()),
            "gamma_connected": _cubes_connected(self.gamma, L_MODE),
            "ponds_clear": bool(not (self.pond_cubes & touched).any()),
            "s_disjoint_from_cluster": bool(not (self.s_vertices & self.cluster).any()),
            "ponds_disjoint_from_cluster": bool(not (live_vertices & self.cluster).any()),
        }

    def summary(self) -> dict:
        cls = self.classes()
        counts = {name: int((cls == name).sum()) for name in CLASS_ORDER}
        verdicts: dict[str, int] = {}
        for v in self.per_cube_property.values():
            verdicts[v.label] = verdicts.get(v.label, 0) + 1
        return {
            "t": self.t,
            "box": {"d": self.box.d, "k": list(self.box.k), "m": self.box.m},
            "class_counts": counts,
            "ponds": len(self.ponds),
            "live_ponds": sum(p.live for p in self.ponds),
            "dead_ponds": sum(not p.live for p in self.ponds),
            "gamma_size": int(self.gamma.sum()),
            "invariants": self.invariants(),
            "cube_verdicts": verdicts,
        }


def _cubes_connected(mask: np.ndarray, mode: str) -> bool:
    if not mask.any():
        return True
    _, n = ndimage.label(mask, structure=neighbourhood_structure(mask.ndim, mode))
    return n == 1


def decompose(field: CapacityField, box: BoxSpec, t: int = DEFAULT_T) -> RenormDecomposition:
    """Cube decomposition of the box's open cluster at scale t.

    Edges inside the box count as open. The field's grid is the window and
    must be aligned to t with enough margin that the boundary cubes of the
    cluster stay off the outermost cube layer.
    """
    if any(k % t for k in box.k) or box.m % t:
        raise InvalidSpecError(f"box sides {box.k}, {box.m} are not multiples of t={t}")
    g = field.grid
    if not g.contains(np.array([box.grid.lo, box.grid.hi])).all():
        raise LatticeRangeError("box is not inside the window")
    cg = CubeGrid(g, t)
    eff = field.opened_inside(box.grid)
    cl = open_cluster(eff, box.grid, inside_open=True)
    if cl.touches_window_boundary:
        raise InfiniteClusterError("open cluster of the box reaches the window boundary")
    c = cl.vertices
    partial = l_neighbours(g, c)
    partial_i = inner_boundary(g, c)
    c_cubes = cg.touching(c)
    boundary_cubes = cg.touching(partial | partial_i)
    if (boundary_cubes & cg.outer_layer).any():
        raise InfiniteClusterError("boundary cubes reach the outer cube layer; enlarge the margin")

    outside = cg.reach_outer(boundary_cubes)
    exterior = boundary_cubes & cg.dilate(outside, Z_MODE)
    inside = ~cg.reach_outer(exterior) & ~exterior
    pond_cubes = inside & ~cg.touching(c | partial)

    labels, n_ponds = ndimage.label(pond_cubes, structure=neighbourhood_structure(g.d, L_MODE))
    ponds: list[Pond] = []
    for i in range(1, n_ponds + 1):
        pc = labels == i
        ext = cg.dilate(pc, L_MODE) & ~pc & cg.reach_outer(pc) & (inside | exterior)
        pv = cg.vertices(pc)
        ponds.append(Pond(pc, ext, pv, inner_boundary(g, pv)))

    ext_vertices = cg.vertices(exterior)
    out_v = outside_reach(g, ext_vertices)
    z_dil = ndimage.binary_dilation(g.nd(out_v), structure=neighbourhood_structure(g.d, Z_MODE)).ravel()
    surface = ext_vertices & z_dil

    region = cg.vertices(inside | exterior)
    for p in ponds:
        region &= ~(p.vertices & ~p.inner_boundary)
    open_in_region = (eff.values > 0) & g.induced_edges(region)
    vlabel = component_labels(g, open_in_region)

    surface_labels = set(np.unique(vlabel[surface & region]).tolist())
    pond_labels = [set(np.unique(vlabel[p.inner_boundary & region]).tolist()) for p in ponds]

    # ponds are linked when one open cluster touches both inner boundaries
    parent = list(range(len(ponds)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner: dict[int, int] = {}
    for i, labs in enumerate(pond_labels):
        for lab in labs:
            if lab in owner:
                parent[find(i)] = find(owner[lab])
            else:
                owner[lab] = i
    good_roots = set()
    for i, p in enumerate(ponds):
        if (p.vertices & surface).any() or pond_labels[i] & surface_labels:
            good_roots.add(find(i))
    for i, p in enumerate(ponds):
        p.live = find(i) in good_roots

    all_labels = set(surface_labels)
    kept_labels = set(surface_labels)
    for i, p in enumerate(ponds):
        all_labels |= pond_labels[i]
        if p.live:
            kept_labels |= pond_labels[i]
    s_prime = region & np.isin(vlabel, sorted(all_labels))
    s_vertices = region & np.isin(vlabel, sorted(kept_labels))

    live_ext = np.zeros(cg.shape, dtype=bool)
    for p in ponds:
        if p.live:
            live_ext |= p.exterior
    s_cubes = cg.touching(s_vertices) & inside & ~live_ext & ~pond_cubes
    gamma = exterior | s_cubes | live_ext

    return RenormDecomposition(t, box, cg, c, partial, partial_i, c_cubes, boundary_cubes, exterior,
                               inside, pond_cubes, ponds, surface, s_prime, s_vertices, s_cubes, gamma)


def gamma_closed_edges(decomp: RenormDecomposition, field: CapacityField) -> np.ndarray:
    """Closed edges with both endpoints in the vertex set of Gamma."""
    g = decomp.grid
    eff = field.opened_inside(decomp.box.grid)
    inside = g.induced_edges(decomp.cubes.vertices(decomp.gamma))
    return np.flatnonzero(inside & (eff.values == 0))


def verify_gamma_zero_cutset(decomp: RenormDecomposition, field: CapacityField, box: BoxSpec | None = None) -> bool:
    """Whether the closed edges inside Gamma separate the box from the window boundary."""
    g = decomp.grid
    box = box or decomp.box
    keep = np.ones(g.n_edges, dtype=bool)
    keep[gamma_closed_edges(decomp, field)] = False
    reach = reachable(g, keep, box.grid.contains(g.coords))
    return not (reach & g.boundary_mask).any()


@dataclass(frozen=True)
class CubeVerdict:
    blocked: bool
    surfaces_separated: bool
    escape_misses_surface: bool
    disjoint: bool
    n_disjoint: int

    @property
    def label(self) -> str:
        if self.blocked:
            return "blocked"
        return "disjoint" if self.disjoint else "neither"


def three_cube(u: tuple[int, ...], t: int) -> Grid:
    return Grid(tuple(t * (x - 1) for x in u), tuple(t * (x + 2) for x in u))


def interior_edge_mask(region: Grid) -> np.ndarray:
    """Edges of the region whose open segment lies in the region's interior."""
    coords, axis = region.edge_coords(np.arange(region.n_edges))
    lo, hi = np.array(region.lo), np.array(region.hi)
    strict = (coords > lo) & (coords < hi)
    ok = np.ones(region.n_edges, dtype=bool)
    for a in range(region.d):
        others = [b for b in range(region.d) if b != a]
        sel = axis == a
        ok[sel] = np.all(strict[sel][:, others], axis=1) if others else True
    return ok


def _surfaces(region: Grid, t: int) -> list[np.ndarray]:
    """Vertex id arrays of every distinct face of the 3^d sub-cubes of a 3t-cube."""
    d = region.d
    rel = region.coords - np.array(region.lo)
    seen = set()
    out = []
    for off in itertools.product(range(3), repeat=d):
        for a in range(d):
            for side in (0, 1):
                key = (a, off[a] + side) + tuple(off[b] for b in range(d) if b != a)
                if key in seen:
                    continue
                seen.add(key)
                sel = rel[:, a] == t * (off[a] + side)
                for b in range(d):
                    if b != a:
                        sel &= (rel[:, b] >= t * off[b]) & (rel[:, b] <= t * off[b] + t)
                out.append(np.flatnonzero(sel))
    return out


def cube_property(field: CapacityField, cube: tuple[int, ...], t: int) -> CubeVerdict:
    """Blocked / disjoint detection for the 3t-cube around ``cube``, using interior edges only."""
    region = three_cube(tuple(cube), t)
    if not (field.grid.contains(np.array([region.lo, region.hi])).all()):
        raise LatticeRangeError(f"3t-cube around {cube} leaves the window")
    caps = field.on(region)
    usable = interior_edge_mask(region) & (caps > 0)
    labels = component_labels(region, usable)
    faces = _surfaces(region, t)
    n_lab = int(labels.max()) + 1
    inc = np.zeros((len(faces), n_lab), dtype=bool)
    for i, f in enumerate(faces):
        inc[i, labels[f]] = True
    joined = (inc.astype(np.int32) @ inc.T.astype(np.int32)) > 0
    separated = not joined.all()

    rel = region.coords - np.array(region.lo)
    centre = np.all((rel >= t) & (rel <= 2 * t), axis=1)
    centre_surface = centre & np.any((rel == t) | (rel == 2 * t), axis=1)
    outer = region.boundary_mask
    u, v = region.endpoints
    with_edges = np.zeros(n_lab, dtype=bool)
    with_edges[labels[u[usable]]] = True
    escaping = np.intersect1d(labels[centre_surface], labels[outer])
    escaping = escaping[with_edges[escaping]]
    misses = bool(escaping.size and (~inc[:, escaping]).any())

    unit = usable.astype(np.int64)
    flow = solve_max_flow(region, unit, centre, outer).value
    return CubeVerdict(separated or misses, separated, misses, flow >= 2, int(flow))


def verify_cube_properties(decomp: RenormDecomposition, field: CapacityField) -> bool:
    """Every Gamma cube is blocked or disjoint (computed with box edges open)."""
    eff = field.opened_inside(decomp.box.grid)
    ok = True
    for u in decomp.gamma_cubes():
        verdict = cube_property(eff, u, decomp.t)
        decomp.per_cube_property[u] = verdict
        ok &= verdict.blocked or verdict.disjoint
    return bool(ok)


def disjoint_3t_packing(cubes) -> list[tuple[int, ...]]:
    """Cubes whose 3t-neighbourhoods have pairwise disjoint interiors.

    Starts from the most populated residue class of the indices mod 3 (any
    two members are at sup-distance at least 3) and then adds every other
    cube that still fits, scanning in sorted order. This keeps at least a
    ``3^-d`` fraction of the input.
    """
    items = sorted({tuple(int(x) for x in c) for c in cubes})
    if not items:
        return []
    classes: dict[tuple[int, ...], list] = {}
    for c in items:
        classes.setdefault(tuple(x % 3 for x in c), []).append(c)
    best = max(sorted(classes), key=lambda r: len(classes[r]))
    chosen = list(classes[best])
    taken = np.array(chosen)
    for c in items:
        if np.all(np.max(np.abs(taken - np.array(c)), axis=1) >= 3):
            chosen.append(c)
            taken = np.vstack([taken, c])
    return sorted(chosen)


def packing_bound_holds(gamma_size: int, packed: int, d: int) -> bool:
    return packed * 2 ** (2 * d) >= gamma_size
