"""Exact maximum flow on lattice regions and min-cut extraction.

The solver is a layered blocking-flow (Dinic) scheme on integer capacities.
Each undirected edge becomes a pair of opposite arcs that share residual
capacity, so the flow on an edge is a signed integer: positive means it runs
from the lower endpoint to the upper one. Neighbours are scanned in edge-id
order, which makes every solve replayable.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order

from .capacity import CapacityField
from .cutset import Cutset, make_self_avoiding
from .errors import InconsistencyError, InvalidSpecError, ResourceError
from .lattice import AmbientWindow, BoxSpec, Grid, as_grid, region_faces

DEFAULT_MAX_VERTICES = 4_000_000


@dataclass(frozen=True, eq=False)
class FlowResult:
    grid: Grid
    value: int
    edge_flow: np.ndarray
    source_side: np.ndarray
    sources: np.ndarray
    sinks: np.ndarray
    capacities: np.ndarray = dc_field(repr=False)

    def flow(self, e: int) -> tuple[int, int]:
        """Magnitude and orientation (+1 along the axis, -1 against, 0 idle) of edge ``e``."""
        f = int(self.edge_flow[e])
        return abs(f), (f > 0) - (f < 0)

    def with_edge_flow(self, edge_flow: np.ndarray) -> "FlowResult":
        return FlowResult(self.grid, self.value, np.asarray(edge_flow, dtype=np.int64), self.source_side,
                          self.sources, self.sinks, self.capacities)


def _build_arcs(n: int, eu: np.ndarray, ev: np.ndarray, caps: np.ndarray, sources: np.ndarray,
                sinks: np.ndarray, inf: int):
    """Arc arrays for the residual network; arcs 2j and 2j+1 are mutual reverses."""
    live = np.flatnonzero(caps > 0)
    s, t = n, n + 1
    src_ids = np.flatnonzero(sources)
    snk_ids = np.flatnonzero(sinks)
    ne = live.size
    heads = np.empty(2 * ne, dtype=np.int64)
    tails = np.empty(2 * ne, dtype=np.int64)
    heads[0::2], tails[0::2] = ev[live], eu[live]
    heads[1::2], tails[1::2] = eu[live], ev[live]
    res = np.repeat(caps[live], 2)
    # terminal arcs: s->source, then sink->t; reverses start empty
    th = np.empty(2 * (src_ids.size + snk_ids.size), dtype=np.int64)
    tt = np.empty_like(th)
    tr = np.zeros_like(th)
    k = 2 * src_ids.size
    th[0:k:2], tt[0:k:2], tr[0:k:2] = src_ids, s, inf
    th[1:k:2], tt[1:k:2] = s, src_ids
    th[k::2], tt[k::2], tr[k::2] = t, snk_ids, inf
    th[k + 1::2], tt[k + 1::2] = snk_ids, t
    heads = np.concatenate([heads, th])
    tails = np.concatenate([tails, tt])
    res = np.concatenate([res, tr])
    # scan order inside each node: lattice arcs by edge id, terminal arcs last
    key = np.concatenate([np.repeat(live, 2), np.full(th.size, np.iinfo(np.int64).max)])
    order = np.lexsort((key, tails))
    bounds = np.searchsorted(tails[order], np.arange(n + 3))
    flat = order.tolist()
    adj = [flat[bounds[i]:bounds[i + 1]] for i in range(n + 2)]
    return live, heads.tolist(), res.tolist(), adj


def _dinic(n_nodes: int, s: int, t: int, heads: list, res: list, adj: list) -> tuple[int, list]:
    total = 0
    while True:
        level = [-1] * n_nodes
        level[s] = 0
        q = deque([s])
        while q:
            x = q.popleft()
            lx = level[x] + 1
            for a in adj[x]:
                if res[a] > 0:
                    y = heads[a]
                    if level[y] < 0:
                        level[y] = lx
                        q.append(y)
        if level[t] < 0:
            return total, level
        it = [0] * n_nodes
        stack: list[int] = []
        x = s
        while True:
            if x == t:
                b = min(res[a] for a in stack)
                cut_at = -1
                for i, a in enumerate(stack):
                    res[a] -= b
                    res[a ^ 1] += b
                    if cut_at < 0 and res[a] == 0:
                        cut_at = i
                total += b
                del stack[cut_at:]
                x = heads[stack[-1]] if stack else s
                continue
            lst = adj[x]
            i = it[x]
            nl = level[x] + 1
            m = len(lst)
            while i < m:
                a = lst[i]
                if res[a] > 0 and level[heads[a]] == nl:
                    break
                i += 1
            it[x] = i
            if i < m:
                stack.append(lst[i])
                x = heads[lst[i]]
            else:
                if x == s:
                    break
                level[x] = -1
                a = stack.pop()
                x = heads[a ^ 1]
                it[x] += 1


def solve_max_flow(grid: Grid, caps: np.ndarray, sources: np.ndarray, sinks: np.ndarray) -> FlowResult:
    """Maximum flow from a vertex set to a disjoint vertex set of ``grid``."""
    caps = np.asarray(caps, dtype=np.int64)
    sources = np.asarray(sources, dtype=bool)
    sinks = np.asarray(sinks, dtype=bool)
    if (sources & sinks).any():
        raise InvalidSpecError("source and sink sets overlap")
    n = grid.n_vertices
    eu, ev = grid.endpoints
    inf = int(caps.sum()) + 1
    live, heads, res, adj = _build_arcs(n, eu, ev, caps, sources, sinks, inf)
    value, level = _dinic(n + 2, n, n + 1, heads, res, adj)
    flow = np.zeros(grid.n_edges, dtype=np.int64)
    if live.size:
        flow[live] = caps[live] - np.asarray(res[0:2 * live.size:2], dtype=np.int64)
    side = np.asarray(level[:n]) >= 0
    return FlowResult(grid, int(value), flow, side, sources, sinks, caps)


def _guard(n_vertices: int, max_vertices: int) -> None:
    if n_vertices > max_vertices:
        raise ResourceError(f"window of {n_vertices} vertices exceeds the budget of {max_vertices}")


def max_flow_box(box: BoxSpec, field: CapacityField, max_vertices: int = DEFAULT_MAX_VERTICES) -> FlowResult:
    """Maximum flow from the bottom face to the top face inside the box."""
    if box.m == 0:
        raise InvalidSpecError("degenerate box: m = 0 makes the bottom and top faces coincide")
    return max_flow_region(box.grid, field, max_vertices)


def max_flow_region(region, field: CapacityField, max_vertices: int = DEFAULT_MAX_VERTICES) -> FlowResult:
    """Bottom-to-top maximum flow inside any rectangular region of the field's grid."""
    g = as_grid(region)
    if g.lo[-1] == g.hi[-1]:
        raise InvalidSpecError("degenerate region: bottom and top faces coincide")
    _guard(g.n_vertices, max_vertices)
    src, snk = region_faces(g)
    return solve_max_flow(g, field.on(g), src, snk)


def max_flow_to_boundary(box: BoxSpec, field: CapacityField, margin: int,
                         max_vertices: int = DEFAULT_MAX_VERTICES) -> FlowResult:
    """Maximum flow from every box vertex to the boundary of the box padded by ``margin``."""
    if margin < 1:
        raise InvalidSpecError("margin must be at least 1")
    g = AmbientWindow(box, margin).grid
    _guard(g.n_vertices, max_vertices)
    src = box.grid.contains(g.coords)
    return solve_max_flow(g, field.on(g), src, g.boundary_mask)


@dataclass(frozen=True)
class FlowCheck:
    ok: bool
    violations: list[str]
    vertex: tuple[int, ...] | None = None

    def __bool__(self) -> bool:
        return self.ok


def net_outflow(result: FlowResult) -> np.ndarray:
    eu, ev = result.grid.endpoints
    out = np.zeros(result.grid.n_vertices, dtype=np.int64)
    np.add.at(out, eu, result.edge_flow)
    np.subtract.at(out, ev, result.edge_flow)
    return out


def verify_flow(result: FlowResult, field: CapacityField | None = None) -> FlowCheck:
    """Admissibility, conservation away from terminals, and value accounting, all exact."""
    caps = field.on(result.grid) if field is not None else result.capacities
    g = result.grid
    problems: list[str] = []
    vertex = None
    over = np.flatnonzero(np.abs(result.edge_flow) > caps)
    if over.size:
        c, a = g.edge_coords(over[:1])
        problems.append(f"edge {int(over[0])} at {tuple(c[0].tolist())} axis {int(a[0])} exceeds capacity")
        vertex = tuple(c[0].tolist())
    out = net_outflow(result)
    inner = ~(result.sources | result.sinks)
    bad = np.flatnonzero(inner & (out != 0))
    if bad.size:
        coord = tuple(g.vertex_coords(bad[:1])[0].tolist())
        problems.append(f"conservation fails at vertex {coord} (net outflow {int(out[bad[0]])})")
        vertex = vertex or coord
    src_out = int(out[result.sources].sum())
    snk_in = int(-out[result.sinks].sum())
    if src_out != result.value or snk_in != result.value:
        problems.append(f"value {result.value} but source outflow {src_out}, sink inflow {snk_in}")
    return FlowCheck(not problems, problems, vertex)


def residual_source_side(result: FlowResult, caps: np.ndarray) -> np.ndarray:
    """Vertices reachable from the sources along arcs with positive residual capacity."""
    g = result.grid
    n = g.n_vertices
    eu, ev = g.endpoints
    f = result.edge_flow
    fwd = caps - f > 0
    bwd = caps + f > 0
    src_ids = np.flatnonzero(result.sources)
    rows = np.concatenate([eu[fwd], ev[bwd], np.full(src_ids.size, n)])
    cols = np.concatenate([ev[fwd], eu[bwd], src_ids])
    m = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n + 1, n + 1)).tocsr()
    order = breadth_first_order(m, n, directed=True, return_predecessors=False)
    side = np.zeros(n + 1, dtype=bool)
    side[order] = True
    return side[:n]


def min_cut_from_flow(result: FlowResult, field: CapacityField | None = None) -> Cutset:
    """The saturated edges leaving the residual source side."""
    g = result.grid
    caps = field.on(g) if field is not None else result.capacities
    side = residual_source_side(result, caps)
    if (side & result.sinks).any():
        raise InconsistencyError("flow is not maximal: a sink is reachable in the residual graph")
    eu, ev = g.endpoints
    crossing = np.flatnonzero(side[eu] != side[ev])
    outward = np.where(side[eu[crossing]], result.edge_flow[crossing], -result.edge_flow[crossing])
    if np.any(outward != caps[crossing]):
        raise InconsistencyError("crossing edge not saturated")
    tau = int(caps[crossing].sum())
    if tau != result.value:
        raise InconsistencyError(f"cut capacity {tau} differs from flow value {result.value}")
    return Cutset(g, crossing, result.sources, result.sinks, tau, False, caps)


def canonical_min_cut(region, field: CapacityField, max_vertices: int = DEFAULT_MAX_VERTICES) -> tuple[FlowResult, Cutset]:
    """Maximum flow plus the self-avoiding reduction of the residual minimum cut.

    The residual source side of a maximum flow is the unique smallest
    source side of a minimum cut, so the result does not depend on which
    maximum flow the solver found.
    """
    g = as_grid(region)
    res = max_flow_region(g, field, max_vertices)
    return res, make_self_avoiding(min_cut_from_flow(res))
