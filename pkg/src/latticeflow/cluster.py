"""Open clusters, their exterior boundaries, and zero-cutset detection."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .capacity import CapacityField, DistributionSpec, sample_field
from .cutset import TailReport, is_connected, l_neighbours, reachable, tail_histogram
from .errors import InfiniteClusterError
from .flow import solve_max_flow
from .lattice import L_MODE, Z_MODE, AmbientWindow, BoxSpec, Grid, as_grid, build_box, neighbourhood_structure


@dataclass(frozen=True, eq=False)
class OpenCluster:
    grid: Grid
    seed: np.ndarray
    vertices: np.ndarray
    touches_window_boundary: bool

    @property
    def size(self) -> int:
        return int(self.vertices.sum())


def _seed_mask(grid: Grid, seed) -> np.ndarray:
    if isinstance(seed, (Grid, BoxSpec, AmbientWindow)):
        return as_grid(seed).contains(grid.coords)
    a = np.asarray(seed)
    if a.dtype == bool:
        return a.copy()
    m = np.zeros(grid.n_vertices, dtype=bool)
    m[a.astype(np.int64)] = True
    return m


def open_edges(field: CapacityField, seed_mask: np.ndarray | None = None) -> np.ndarray:
    """Open-edge mask; with a seed mask, edges inside the seed count as open."""
    is_open = field.values > 0
    if seed_mask is not None:
        is_open = is_open | field.grid.induced_edges(seed_mask)
    return is_open


def open_cluster(field: CapacityField, seed, inside_open: bool = True) -> OpenCluster:
    """All window vertices joined to ``seed`` by open paths."""
    g = field.grid
    seed_mask = _seed_mask(g, seed)
    edges = open_edges(field, seed_mask if inside_open else None)
    verts = reachable(g, edges, seed_mask) | seed_mask
    return OpenCluster(g, seed_mask, verts, bool((verts & g.boundary_mask).any()))


def outside_reach(grid: Grid, blocked: np.ndarray) -> np.ndarray:
    """Vertices joined to the window boundary by Z^d paths avoiding ``blocked``."""
    free = grid.nd(~np.asarray(blocked, dtype=bool))
    labels, _ = ndimage.label(free, structure=neighbourhood_structure(grid.d, Z_MODE))
    flat = labels.ravel()
    hit = np.unique(flat[grid.boundary_mask & (flat > 0)])
    return np.isin(flat, hit) & (flat > 0)


@dataclass(frozen=True, eq=False)
class BoundarySets:
    grid: Grid
    delta: np.ndarray
    delta_e: np.ndarray
    partial: np.ndarray
    partial_e: np.ndarray
    partial_i: np.ndarray

    @property
    def exterior_connected(self) -> bool:
        return is_connected(self.grid, self.partial_e, L_MODE)


def inner_boundary(grid: Grid, vertex_mask: np.ndarray) -> np.ndarray:
    """Vertices of the set that are L^d-adjacent to a vertex outside it."""
    vm = np.asarray(vertex_mask, dtype=bool)
    outer = l_neighbours(grid, vm)
    dil = ndimage.binary_dilation(grid.nd(outer), structure=neighbourhood_structure(grid.d, L_MODE)).ravel()
    return vm & dil


def exterior_boundary(cluster: OpenCluster) -> BoundarySets:
    """Edge and vertex boundaries of a finite cluster, split by reachability from outside."""
    if cluster.touches_window_boundary:
        raise InfiniteClusterError("cluster reaches the window boundary")
    g = cluster.grid
    a = cluster.vertices
    partial = l_neighbours(g, a)
    out = outside_reach(g, a)
    u, v = g.endpoints
    delta = np.flatnonzero(a[u] != a[v])
    outer_end = np.where(a[u[delta]], v[delta], u[delta])
    delta_e = delta[out[outer_end]]
    return BoundarySets(g, delta, delta_e, partial, partial & out, inner_boundary(g, a))


def zero_cutset_exists(field: CapacityField, box: BoxSpec) -> bool:
    """Whether the open cluster of the box (box edges open) stays inside the window."""
    return not open_cluster(field, box.grid, inside_open=True).touches_window_boundary


@dataclass(frozen=True)
class BoundaryTail:
    sizes: np.ndarray
    min_cut_sizes: np.ndarray
    discarded: int
    report: TailReport | None
    insufficient: bool

    def rows(self) -> list[tuple[int, int, int]]:
        """(n, count, number of samples >= n) for every observed size."""
        vals, counts = np.unique(self.sizes, return_counts=True)
        tail = counts[::-1].cumsum()[::-1]
        return [(int(n), int(c), int(t)) for n, c, t in zip(vals, counts, tail)]


def fewest_edge_min_cut(field: CapacityField, box: BoxSpec, margin: int) -> int:
    """Edge count of the cheapest box-to-boundary cut having the fewest edges.

    Edge weights ``tau * M + 1`` with ``M`` above the edge count rank cuts by
    passage time first and edge count second, exactly.
    """
    g = AmbientWindow(box, margin).grid
    caps = field.on(g)
    big = g.n_edges + 1
    res = solve_max_flow(g, caps * big + 1, box.grid.contains(g.coords), g.boundary_mask)
    return int(res.value % big)


def boundary_tail(dist: DistributionSpec, n_samples: int, margin: int = 8, d: int = 2, master_seed: int = 0,
                  max_margin: int = 64, min_samples: int = 10) -> BoundaryTail:
    """Sizes of the exterior edge boundary of the origin's open cluster over many samples.

    A sample whose cluster reaches the window is retried with the margin
    doubled, up to ``max_margin``, and discarded after that.
    """
    origin = build_box(d, (0,) * (d - 1), 0)
    sizes, cuts, discarded = [], [], 0
    for r in range(n_samples):
        m = margin
        while True:
            win = AmbientWindow(origin, m)
            field = sample_field(win, dist, master_seed, r)
            cl = open_cluster(field, origin.grid, inside_open=True)
            if not cl.touches_window_boundary:
                sizes.append(int(exterior_boundary(cl).delta_e.size))
                cuts.append(fewest_edge_min_cut(field, origin, m))
                break
            if m * 2 > max_margin:
                discarded += 1
                break
            m *= 2
    arr = np.asarray(sizes, dtype=np.int64)
    insufficient = arr.size < min_samples
    report = tail_histogram(arr) if arr.size else None
    return BoundaryTail(arr, np.asarray(cuts, dtype=np.int64), discarded, report, insufficient)


def write_tail_csv(path: str | Path, tail: BoundaryTail) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "count", "cumulative"])
        w.writerows(tail.rows())
