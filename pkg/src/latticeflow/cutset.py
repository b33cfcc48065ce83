"""Cutsets: verification, self-avoiding reduction, boundary structure and size statistics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .capacity import DEFAULT_EPSILON, DEFAULT_SCALE, classify_values
from .errors import ContractError
from .lattice import L_MODE, Z_MODE, BoxSpec, Grid, as_grid, neighbourhood_structure


def _ids(x, n: int) -> np.ndarray:
    """Accept either a boolean mask of length n or an array of ids."""
    a = np.asarray(x)
    if a.dtype == bool:
        if a.shape != (n,):
            raise ContractError("mask has the wrong length")
        return np.flatnonzero(a)
    return np.unique(a.astype(np.int64))


def component_labels(grid: Grid, edge_mask: np.ndarray) -> np.ndarray:
    """Connected-component label of every vertex using only edges in ``edge_mask``."""
    u, v = grid.endpoints
    sel = np.asarray(edge_mask, dtype=bool)
    n = grid.n_vertices
    adj = coo_matrix((np.ones(int(sel.sum()), dtype=np.int8), (u[sel], v[sel])), shape=(n, n))
    return connected_components(adj, directed=False)[1]


def reachable(grid: Grid, edge_mask: np.ndarray, seeds) -> np.ndarray:
    """Vertex mask of everything joined to ``seeds`` through edges in ``edge_mask``."""
    labels = component_labels(grid, edge_mask)
    seed_ids = _ids(seeds, grid.n_vertices)
    out = np.zeros(grid.n_vertices, dtype=bool)
    if seed_ids.size:
        out = np.isin(labels, np.unique(labels[seed_ids]))
    return out


@dataclass(frozen=True, eq=False)
class Cutset:
    """A set of edges of ``grid`` meeting every path from ``source`` to ``sink``."""

    grid: Grid
    edges: np.ndarray
    source: np.ndarray
    sink: np.ndarray
    passage_time: int
    self_avoiding: bool = False
    capacities: np.ndarray | None = dc_field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", np.unique(np.asarray(self.edges, dtype=np.int64)))
        object.__setattr__(self, "source", _ids(self.source, self.grid.n_vertices))
        object.__setattr__(self, "sink", _ids(self.sink, self.grid.n_vertices))

    @property
    def n_edges(self) -> int:
        return int(self.edges.size)

    @property
    def vertex_ids(self) -> np.ndarray:
        u, v = self.grid.endpoints
        return np.unique(np.concatenate([u[self.edges], v[self.edges]]))

    @property
    def n_vertices(self) -> int:
        return int(self.vertex_ids.size)

    def edge_mask(self) -> np.ndarray:
        m = np.zeros(self.grid.n_edges, dtype=bool)
        m[self.edges] = True
        return m

    def edge_values(self) -> np.ndarray:
        if self.capacities is None:
            raise ContractError("cutset carries no capacities")
        return self.capacities[self.edges]

    def to_json(self) -> str:
        return json.dumps({
            "lo": list(self.grid.lo), "hi": list(self.grid.hi),
            "edges": self.edges.tolist(),
            "passage_time": int(self.passage_time),
            "self_avoiding": bool(self.self_avoiding),
        }, sort_keys=True)


def make_cutset(grid: Grid, edges, source, sink, capacities: np.ndarray, self_avoiding: bool = False) -> Cutset:
    edges = np.unique(np.asarray(edges, dtype=np.int64))
    caps = np.asarray(capacities, dtype=np.int64)
    return Cutset(grid, edges, source, sink, int(caps[edges].sum()), self_avoiding, caps)


def cutset_from_json(text: str, capacities: np.ndarray, source, sink) -> Cutset:
    rec = json.loads(text)
    g = Grid(tuple(rec["lo"]), tuple(rec["hi"]))
    return make_cutset(g, rec["edges"], source, sink, capacities, rec["self_avoiding"])


def is_cutset(edges, host, source, sink) -> bool:
    """True iff every host path from ``source`` to ``sink`` uses one of ``edges``."""
    g = as_grid(host)
    keep = np.ones(g.n_edges, dtype=bool)
    keep[np.asarray(edges, dtype=np.int64)] = False
    reach = reachable(g, keep, source)
    return not reach[_ids(sink, g.n_vertices)].any()


def _separates(grid: Grid, keep: np.ndarray, src: np.ndarray, snk: np.ndarray) -> bool:
    labels = component_labels(grid, keep)
    return not np.intersect1d(labels[src], labels[snk]).size


def make_self_avoiding(cut: Cutset, host=None) -> Cutset:
    """Drop redundant edges, heaviest first (ties: larger edge id first)."""
    g = as_grid(host) if host is not None else cut.grid
    keep = np.ones(g.n_edges, dtype=bool)
    keep[cut.edges] = False
    if not _separates(g, keep, cut.source, cut.sink):
        raise ContractError("input is not a cutset")
    caps = cut.capacities if cut.capacities is not None else np.zeros(g.n_edges, dtype=np.int64)
    order = sorted(cut.edges.tolist(), key=lambda e: (-int(caps[e]), -e))
    retained = set(cut.edges.tolist())
    for e in order:
        keep[e] = True
        if _separates(g, keep, cut.source, cut.sink):
            retained.discard(e)
        else:
            keep[e] = False
    edges = np.array(sorted(retained), dtype=np.int64)
    return Cutset(g, edges, cut.source, cut.sink, int(caps[edges].sum()), True, cut.capacities)


def is_minimal(cut: Cutset) -> bool:
    """Drop-one check: removing any single edge reconnects source and sink."""
    g = cut.grid
    keep = np.ones(g.n_edges, dtype=bool)
    keep[cut.edges] = False
    if not _separates(g, keep, cut.source, cut.sink):
        return False
    for e in cut.edges:
        keep[e] = True
        ok = _separates(g, keep, cut.source, cut.sink)
        keep[e] = False
        if ok:
            return False
    return True


def is_connected(grid: Grid, vertex_mask: np.ndarray, mode: str = L_MODE) -> bool:
    """Whether a vertex set is connected under Z^d or L^d adjacency (empty counts as connected)."""
    vm = grid.nd(np.asarray(vertex_mask, dtype=bool))
    if not vm.any():
        return True
    _, n = ndimage.label(vm, structure=neighbourhood_structure(grid.d, mode))
    return n == 1


def l_neighbours(grid: Grid, vertex_mask: np.ndarray) -> np.ndarray:
    """Vertices outside the set that are L^d-adjacent to it."""
    vm = grid.nd(np.asarray(vertex_mask, dtype=bool))
    dil = ndimage.binary_dilation(vm, structure=neighbourhood_structure(grid.d, L_MODE))
    return (dil & ~vm).ravel()


@dataclass(frozen=True)
class ConnectivityReport:
    source_region: np.ndarray
    exterior_vertices: np.ndarray
    identity_holds: bool
    exterior_connected: bool
    exterior_z_connected: bool
    count_bound_holds: bool
    n_edges: int
    n_exterior: int

    @property
    def ok(self) -> bool:
        return self.identity_holds and self.exterior_connected and self.count_bound_holds


def connectivity_structure(cut: Cutset, host=None, source=None) -> ConnectivityReport:
    """Check the exterior-boundary structure of a self-avoiding cutset.

    The source region is everything reachable from the source avoiding cut
    edges. Its exterior edge boundary must be exactly the cut, its exterior
    vertex boundary must be connected, and the cut must have at least
    ``|exterior| / 3**(d+1)`` edges.
    """
    if not cut.self_avoiding:
        raise ContractError("connectivity structure needs a self-avoiding cutset")
    g = as_grid(host) if host is not None else cut.grid
    src = cut.source if source is None else _ids(source, g.n_vertices)
    keep = ~cut.edge_mask()
    labels = component_labels(g, keep)
    region = np.isin(labels, np.unique(labels[src]))
    far = np.isin(labels, np.unique(labels[cut.sink]))
    u, v = g.endpoints
    boundary = region[u] != region[v]
    far_end = np.where(region[u], far[v], far[u])
    delta_e = np.flatnonzero(boundary & far_end)
    identity = np.array_equal(delta_e, cut.edges)
    exterior = l_neighbours(g, region) & far
    n_ext = int(exterior.sum())
    return ConnectivityReport(
        source_region=region,
        exterior_vertices=exterior,
        identity_holds=bool(identity),
        exterior_connected=is_connected(g, exterior, L_MODE),
        exterior_z_connected=is_connected(g, exterior, Z_MODE),
        count_bound_holds=cut.n_edges * 3 ** (g.d + 1) >= n_ext,
        n_edges=cut.n_edges,
        n_exterior=n_ext,
    )


@dataclass(frozen=True)
class SizeStats:
    n_bar: int
    n_plus: int
    n_minus: int
    j: int
    n_vertices: int


def size_stats(cut: Cutset, epsilon=DEFAULT_EPSILON, scale: int | None = None) -> SizeStats:
    """Edge count, eps-plus and eps-minus counts and the number of open cut edges."""
    vals = cut.edge_values()
    cls = classify_values(vals, epsilon, scale or DEFAULT_SCALE)
    n_plus = int((cls == 2).sum())
    n_minus = int((cls == 1).sum())
    return SizeStats(cut.n_edges, n_plus, n_minus, n_plus + n_minus, cut.n_vertices)


def default_beta_bar(d: int, beta_hat: float = 2.0) -> float:
    return 2 * d * beta_hat


def estimate_beta_hat(n_bar_samples: Sequence[int], volume: int, quantile: float = 0.99) -> float:
    """Empirical multiplier: a high quantile of cut size over base volume."""
    arr = np.asarray(n_bar_samples, dtype=float)
    return float(np.quantile(arr, quantile) / max(volume, 1))


@dataclass(frozen=True)
class RegularityReport:
    is_regular: bool
    bound: float
    chosen_plane: int | None
    plane_trace_size: int
    plane_bound: float
    plane_limit: float


def plane_traces(cut: Cutset, axis: int = 0) -> np.ndarray:
    """Number of cut vertices on each plane x_axis = const, indexed from the grid's low end."""
    g = cut.grid
    c = g.coords[cut.vertex_ids, axis] - g.lo[axis]
    return np.bincount(c, minlength=g.shape[axis])


def balanced_plane_search(cut: Cutset, box: BoxSpec, delta: float = 1.0, beta_bar: float | None = None) -> RegularityReport:
    """First plane pair L_l, L_{k1-l} whose joint trace is below ``beta_bar k1^(delta/2) k2...k_{d-1}``."""
    if not 0 < delta <= 1:
        raise ContractError("delta must lie in (0, 1]")
    if beta_bar is None:
        beta_bar = default_beta_bar(box.d)
    k1 = box.k[0]
    rest = math.prod(box.k[1:])
    bound = beta_bar * box.volume
    regular = cut.n_vertices <= bound
    plane_bound = beta_bar * k1 ** (delta / 2) * rest
    limit = k1 ** (1 - delta / 2)
    traces = plane_traces(cut, 0)
    chosen, size = None, 0
    for ell in range(0, k1 // 2 + 1):
        s = int(traces[ell]) + (int(traces[k1 - ell]) if k1 - ell != ell else 0)
        if s <= plane_bound:
            chosen, size = ell, s
            break
    if regular and (chosen is None or chosen > limit):
        raise AssertionError(f"plane search failed: chosen={chosen}, limit={limit:.3f}")
    return RegularityReport(bool(regular), bound, chosen, size, plane_bound, limit)


@dataclass(frozen=True)
class TailReport:
    n: np.ndarray
    tail: np.ndarray
    slope: float
    intercept: float
    fit_from: float


def tail_histogram(samples: Sequence[int], bin_width: int = 1, fit_from: float | None = None,
                   min_count: int = 1) -> TailReport:
    """Empirical tail P[N >= n] on a grid of step ``bin_width`` plus a log-linear fit.

    The fit uses grid points at or above ``fit_from`` (default: the sample
    median) whose tail count is at least ``min_count``.
    """
    arr = np.sort(np.asarray(samples, dtype=np.int64))
    if arr.size == 0:
        raise ContractError("tail needs at least one sample")
    lo = int(arr[0]) - int(arr[0]) % bin_width
    grid = np.arange(lo, int(arr[-1]) + bin_width + 1, bin_width)
    counts = arr.size - np.searchsorted(arr, grid, side="left")
    tail = counts / arr.size
    start = float(np.median(arr)) if fit_from is None else float(fit_from)
    sel = (grid >= start) & (counts >= min_count)
    slope, intercept = float("nan"), float("nan")
    if sel.sum() >= 2:
        slope, intercept = (float(x) for x in np.polyfit(grid[sel], np.log(tail[sel]), 1))
    return TailReport(grid, tail, slope, intercept, start)
