"""Cutset traces on hyperplanes, tunnel exits, mirror reflection and patching.

A bottom-top cutset of a box leaves, on a hyperplane ``x_axis = c``, a
trace of plane edges. Removing the trace splits the plane into clusters;
those joined to the top face inside the box without crossing the cutset are
upper exits, those joined to the bottom face are lower exits. Two cutsets of
adjacent boxes whose exits agree after a one-unit shift patch together into
a cutset of the joined box.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .capacity import CapacityField
from .cutset import Cutset, component_labels, is_cutset, make_cutset, reachable
from .errors import ContractError, InconsistencyError, LatticeRangeError, MismatchError
from .flow import canonical_min_cut
from .lattice import BoxSpec, Grid, as_grid, region_faces

Cluster = frozenset  # frozenset of coordinate tuples


def _edges_on(cut: Cutset, g: Grid) -> np.ndarray:
    """Ids in ``g`` of the cut edges that lie in ``g``."""
    if cut.grid == g:
        return cut.edges
    c, a = cut.grid.edge_coords(cut.edges)
    inside = g.contains(c) & g.contains(c + np.eye(g.d, dtype=np.int64)[a])
    return g.edge_ids(c[inside], a[inside]) if inside.any() else np.zeros(0, np.int64)


def _cluster(g: Grid, mask: np.ndarray) -> Cluster:
    return frozenset(map(tuple, g.vertex_coords(np.flatnonzero(mask)).tolist()))


def _cluster_key(c: Cluster) -> tuple:
    return (min(c), len(c))


@dataclass(frozen=True, eq=False)
class TunnelExits:
    plane: tuple[int, int]
    trace_edges: np.ndarray
    upper: list[Cluster]
    lower: list[Cluster]
    neither: list[Cluster]
    grid: Grid
    blocked: np.ndarray

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.upper), len(self.lower)

    def mask(self, clusters: Iterable[Cluster]) -> np.ndarray:
        m = np.zeros(self.grid.n_vertices, dtype=bool)
        pts = [p for c in clusters for p in c]
        if pts:
            m[self.grid.vertex_ids(pts)] = True
        return m


def tunnel_exits(cut: Cutset, box, plane: tuple[int, int] | None = None) -> TunnelExits:
    """Exits of the upper and lower tunnels of ``cut`` on ``plane`` = (axis, coordinate).

    The default plane is the box's high face along the first axis.
    """
    g = as_grid(box)
    axis, coord = plane if plane is not None else (0, g.hi[0])
    if not 0 <= axis < g.d - 1:
        raise LatticeRangeError(f"plane axis {axis} must be a base axis")
    if not g.lo[axis] <= coord <= g.hi[axis]:
        raise LatticeRangeError(f"plane x_{axis} = {coord} does not meet the box")
    bottom, top = region_faces(g)
    cut_edges = _edges_on(cut, g)
    keep = np.ones(g.n_edges, dtype=bool)
    keep[cut_edges] = False
    if not is_cutset(cut_edges, g, bottom, top):
        raise ContractError("edges do not separate the bottom face from the top face")
    on_plane = g.coords[:, axis] == coord
    plane_e = g.induced_edges(on_plane)
    trace = np.flatnonzero(plane_e & ~keep)
    labels = component_labels(g, plane_e & keep)
    up = reachable(g, keep, top)
    down = reachable(g, keep, bottom)
    upper, lower, neither = [], [], []
    for lab in np.unique(labels[on_plane]):
        members = on_plane & (labels == lab)
        c = _cluster(g, members)
        if up[members].any():
            upper.append(c)
        if down[members].any():
            lower.append(c)
        if not up[members].any() and not down[members].any():
            neither.append(c)
    return TunnelExits((axis, coord), trace, sorted(upper, key=_cluster_key), sorted(lower, key=_cluster_key),
                       sorted(neither, key=_cluster_key), g, ~keep)


def verify_exit_disjoint(exits: TunnelExits) -> bool:
    """No plane vertex belongs to both an upper and a lower exit."""
    return not (exits.mask(exits.upper) & exits.mask(exits.lower)).any()


def verify_exit_boundaries(exits: TunnelExits) -> bool:
    """Every plane edge leaving an exit is a cut edge."""
    g = exits.grid
    axis, coord = exits.plane
    on_plane = g.coords[:, axis] == coord
    u, v = g.endpoints
    plane_e = on_plane[u] & on_plane[v]
    for c in exits.upper + exits.lower:
        m = exits.mask([c])
        leaving = plane_e & (m[u] != m[v])
        if (leaving & ~exits.blocked).any():
            return False
    return True


def verify_exit_closure(exits: TunnelExits) -> bool:
    """Plane vertices joined to the upper (lower) exits inside the box, avoiding the cut, are exits themselves."""
    g = exits.grid
    axis, coord = exits.plane
    on_plane = g.coords[:, axis] == coord
    keep = ~exits.blocked
    for group in (exits.upper, exits.lower):
        m = exits.mask(group)
        if not m.any():
            continue
        if (reachable(g, keep, m) & on_plane & ~m).any():
            return False
    return True


def exit_pattern(exits: TunnelExits) -> tuple:
    """Translation-free fingerprint of the exits: plane coordinates of each cluster, base point removed."""
    g = exits.grid
    axis, _ = exits.plane
    keep_axes = [a for a in range(g.d) if a != axis]
    origin = np.array([g.lo[a] for a in keep_axes])

    def norm(clusters):
        return tuple(tuple(sorted(tuple((np.array([p[a] for a in keep_axes]) - origin).tolist()) for p in c))
                     for c in clusters)
    return norm(exits.upper), norm(exits.lower)


def exit_pattern_frequencies(patterns: Iterable[tuple]) -> Counter:
    return Counter(patterns)


# mirror reflection --------------------------------------------------------


@dataclass(frozen=True)
class ReflectionMap:
    """Reflection about ``x_axis = plane_coord_half`` followed by a shift of ``shift`` along the axis.

    ``plane_coord_half`` is ``c + 0.5`` for an integer c, so lattice points map
    to lattice points: ``x_axis -> 2c + 1 + shift - x_axis``. The map is its
    own inverse.
    """

    axis: int
    plane_coord_half: float
    shift: int = 0

    def __post_init__(self) -> None:
        twice = 2 * self.plane_coord_half
        if twice != int(twice) or int(twice) % 2 == 0:
            raise ContractError("the reflection plane must sit halfway between lattice planes")

    @property
    def pivot(self) -> int:
        """The integer ``2c + 1 + shift``."""
        return int(2 * self.plane_coord_half) + self.shift

    def vertices(self, coords: np.ndarray) -> np.ndarray:
        c = np.array(coords, dtype=np.int64, copy=True)
        c[..., self.axis] = self.pivot - c[..., self.axis]
        return c

    def edges(self, coords: np.ndarray, axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lower endpoints and axes of the image edges."""
        c = self.vertices(coords)
        axis = np.asarray(axis, dtype=np.int64)
        c[axis == self.axis, self.axis] -= 1
        return c, axis

    def grid(self, g: Grid) -> Grid:
        lo, hi = list(g.lo), list(g.hi)
        lo[self.axis], hi[self.axis] = self.pivot - g.hi[self.axis], self.pivot - g.lo[self.axis]
        return Grid(tuple(lo), tuple(hi))


def mirror_field(field: CapacityField, axis: int, plane_between: float, shift: int = 0,
                 target=None) -> CapacityField:
    """The reflected field: capacity at e equals the source capacity at the preimage of e.

    Without ``target`` the result lives on the image of the source grid;
    otherwise ``target`` must lie inside that image.
    """
    pi = ReflectionMap(axis, plane_between, shift)
    image = pi.grid(field.grid)
    g = image if target is None else as_grid(target)
    if not (image.contains(np.array([g.lo, g.hi]))).all():
        raise LatticeRangeError("target region is not covered by the reflected field")
    c, a = g.edge_coords(np.arange(g.n_edges))
    pc, pa = pi.edges(c, a)
    vals = field.values[field.grid.edge_ids(pc, pa)] if g.n_edges else np.zeros(0, np.int64)
    return CapacityField(g, vals, field.dist, field.master_seed, field.replicate_id, field.scale)


def mirror_cutset(cut: Cutset, pi: ReflectionMap, capacities: np.ndarray | None = None) -> Cutset:
    """Image of a cutset under ``pi``, on the image grid."""
    g = pi.grid(cut.grid)
    c, a = cut.grid.edge_coords(cut.edges)
    ic, ia = pi.edges(c, a)
    edges = g.edge_ids(ic, ia) if cut.edges.size else np.zeros(0, np.int64)
    src = g.vertex_ids(pi.vertices(cut.grid.vertex_coords(cut.source)))
    snk = g.vertex_ids(pi.vertices(cut.grid.vertex_coords(cut.sink)))
    if capacities is None and cut.capacities is not None:
        gc, ga = g.edge_coords(np.arange(g.n_edges))
        capacities = cut.capacities[cut.grid.edge_ids(*pi.edges(gc, ga))]
    if capacities is None:
        return Cutset(g, edges, src, snk, cut.passage_time, cut.self_avoiding)
    return make_cutset(g, edges, src, snk, capacities, cut.self_avoiding)


# patching -----------------------------------------------------------------


def _shifted(clusters: Sequence[Cluster], axis: int, by: int) -> list[Cluster]:
    out = []
    for c in clusters:
        out.append(frozenset(tuple(x + by if i == axis else x for i, x in enumerate(p)) for p in c))
    return out


def match_exits(exits: TunnelExits, exits_prime: TunnelExits, shift: int = 1) -> None:
    """Raise ``MismatchError`` unless the exit lists agree exactly after shifting by ``shift``."""
    axis = exits.plane[0]
    if exits_prime.plane != (axis, exits.plane[1] + shift):
        raise MismatchError(f"planes {exits.plane} and {exits_prime.plane} are not {shift} apart")
    for name, a, b in (("upper", exits.upper, exits_prime.upper), ("lower", exits.lower, exits_prime.lower)):
        moved = set(_shifted(a, axis, shift))
        other = set(b)
        for c in sorted(moved ^ other, key=_cluster_key):
            side = "first" if c in moved else "second"
            raise MismatchError(f"unmatched {name} exit of the {side} cutset containing {min(c)} "
                                f"({len(c)} vertices)")


def joined_grid(a: Grid, b: Grid, axis: int = 0) -> Grid:
    """Smallest region containing two regions that abut along ``axis``."""
    return Grid(tuple(min(x, y) for x, y in zip(a.lo, b.lo)), tuple(max(x, y) for x, y in zip(a.hi, b.hi)))


def patch_cutsets(w: Cutset, w_prime: Cutset, exits: TunnelExits, exits_prime: TunnelExits,
                  joined=None, capacities: np.ndarray | None = None) -> Cutset:
    """Union of two cutsets of adjacent boxes with matching exits, checked as a cutset of the joined box."""
    match_exits(exits, exits_prime)
    g = as_grid(joined) if joined is not None else joined_grid(exits.grid, exits_prime.grid, exits.plane[0])
    edges = np.union1d(_edges_on(w, g), _edges_on(w_prime, g))
    bottom, top = region_faces(g)
    if not is_cutset(edges, g, bottom, top):
        raise InconsistencyError("exits match but the union does not separate the joined box")
    if capacities is None:
        return Cutset(g, edges, bottom, top, w.passage_time + w_prime.passage_time, False)
    return make_cutset(g, edges, bottom, top, capacities, False)


# nested boxes -------------------------------------------------------------


@dataclass(frozen=True)
class NestedReport:
    restriction_is_cutset: bool
    inner_le_outer: bool
    outer_le_inner_plus_shell: bool
    tau_inner: int
    tau_outer: int
    shell_capacity: int
    padded_is_cutset: bool

    @property
    def ok(self) -> bool:
        return (self.restriction_is_cutset and self.inner_le_outer and self.outer_le_inner_plus_shell
                and self.padded_is_cutset)


def check_nested(field: CapacityField, k_outer: Sequence[int], k_inner: Sequence[int], m: int) -> NestedReport:
    """Restriction, monotonicity and shell bounds between the minimum cuts of two nested boxes."""
    k_outer, k_inner = tuple(k_outer), tuple(k_inner)
    if len(k_outer) != len(k_inner) or any(a > b for a, b in zip(k_inner, k_outer)):
        raise ContractError("inner box sides must not exceed outer box sides")
    d = len(k_outer) + 1
    outer = BoxSpec(d, k_outer, m).grid
    inner = BoxSpec(d, k_inner, m).grid
    _, w_out = canonical_min_cut(outer, field)
    _, w_in = canonical_min_cut(inner, field)
    b_in, t_in = region_faces(inner)
    restricted = _edges_on(w_out, inner)
    a_ok = is_cutset(restricted, inner, b_in, t_in)
    caps = field.on(outer)
    shell = np.ones(outer.n_edges, dtype=bool)
    shell[outer.edges_of(inner)] = False
    shell_cap = int(caps[shell].sum())
    padded = np.union1d(_edges_on(w_in, outer), np.flatnonzero(shell))
    b_out, t_out = region_faces(outer)
    return NestedReport(
        restriction_is_cutset=bool(a_ok),
        inner_le_outer=w_in.passage_time <= w_out.passage_time,
        outer_le_inner_plus_shell=w_out.passage_time <= w_in.passage_time + shell_cap,
        tau_inner=int(w_in.passage_time),
        tau_outer=int(w_out.passage_time),
        shell_capacity=shell_cap,
        padded_is_cutset=bool(is_cutset(padded, outer, b_out, t_out)),
    )


@dataclass(frozen=True)
class MirrorPatchReport:
    exits_disjoint: bool
    boundaries_in_cut: bool
    exits_closed: bool
    patch_ok: bool
    flow_invariant: bool
    tau_joined: int

    @property
    def ok(self) -> bool:
        return (self.exits_disjoint and self.boundaries_in_cut and self.exits_closed and self.patch_ok
                and self.flow_invariant)


def mirror_patch_check(field: CapacityField, box: BoxSpec) -> MirrorPatchReport:
    """Cut ``box``, mirror the cut into the companion box across ``x_0 = k_0 + 1/2`` and patch the two.

    ``field`` must cover the box. The companion box carries the reflected
    field, so its cut's exits on the facing plane match by construction.
    """
    g = box.grid
    f_box = field.restricted(g)
    res, w = canonical_min_cut(g, f_box)
    pi = ReflectionMap(0, g.hi[0] + 0.5)
    f_mirror = mirror_field(f_box, 0, g.hi[0] + 0.5)
    w_prime = mirror_cutset(w, pi)
    res_prime, _ = canonical_min_cut(f_mirror.grid, f_mirror)
    ex = tunnel_exits(w, g)
    ex_prime = tunnel_exits(w_prime, f_mirror.grid, (0, g.hi[0] + 1))
    joined = joined_grid(g, f_mirror.grid)
    patch_ok = True
    tau = w.passage_time + w_prime.passage_time
    try:
        tau = patch_cutsets(w, w_prime, ex, ex_prime, joined).passage_time
    except (MismatchError, InconsistencyError):
        patch_ok = False
    checks = [(verify_exit_disjoint, ex), (verify_exit_disjoint, ex_prime)]
    return MirrorPatchReport(
        exits_disjoint=all(f(e) for f, e in checks),
        boundaries_in_cut=verify_exit_boundaries(ex) and verify_exit_boundaries(ex_prime),
        exits_closed=verify_exit_closure(ex) and verify_exit_closure(ex_prime),
        patch_ok=patch_ok,
        flow_invariant=res.value == res_prime.value,
        tau_joined=int(tau),
    )
