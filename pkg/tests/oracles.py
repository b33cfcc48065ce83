"""Independent reference computations used to freeze expected values.

None of these touch the flow solver: they work from edge lists and plain
Python, so agreement with the solver is evidence rather than tautology.
"""
from __future__ import annotations

import heapq
import itertools

import numpy as np


def _edge_list(grid):
    u, v = grid.endpoints
    return [(int(a), int(b)) for a, b in zip(u, v)]


def min_cut_by_edge_sets(grid, caps, sources, sinks) -> int:
    """Cheapest edge set meeting every source-sink path, by exhaustive branch and bound.

    Edges are decided one at a time: either put in the set (pay its
    capacity) or left usable (merge its endpoints). A branch dies when
    usable edges already join a source to a sink or when it cannot beat the
    best complete set found so far. Every edge subset is covered by some
    branch, so the result is the exact minimum over separating sets.
    """
    edges = _edge_list(grid)
    caps = [int(c) for c in caps]
    n = grid.n_vertices
    src = {int(i) for i in np.flatnonzero(sources)}
    snk = {int(i) for i in np.flatnonzero(sinks)}
    best = [sum(caps) + 1]

    def find(parent, x):
        while parent[x] != x:
            x = parent[x]
        return x

    def connected(parent):
        roots_s = {find(parent, s) for s in src}
        return any(find(parent, t) in roots_s for t in snk)

    def go(i, parent, cost):
        if cost >= best[0]:
            return
        if connected(parent):
            return
        if i == len(edges):
            best[0] = cost
            return
        a, b = edges[i]
        ra, rb = find(parent, a), find(parent, b)
        if ra != rb:
            merged = list(parent)
            merged[ra] = rb
            go(i + 1, merged, cost)
            go(i + 1, parent, cost + caps[i])
        else:
            go(i + 1, parent, cost)

    go(0, list(range(n)), 0)
    return best[0]


def min_cut_by_partitions(grid, caps, sources, sinks) -> int:
    """Cheapest edge boundary over every vertex set containing the sources and no sink."""
    u, v = grid.endpoints
    caps = np.asarray(caps, dtype=np.int64)
    free = np.flatnonzero(~(np.asarray(sources) | np.asarray(sinks)))
    best = None
    for bits in itertools.product((False, True), repeat=free.size):
        side = np.asarray(sources, dtype=bool).copy()
        side[free[np.array(bits, dtype=bool)]] = True
        val = int(caps[side[u] != side[v]].sum())
        best = val if best is None else min(best, val)
    return best


def dual_shortest_path_2d(k: int, m: int, value) -> int:
    """Bottom-top min cut of the planar box [0,k] x [0,m] as a left-right dual shortest path.

    ``value(x, y, axis)`` is the capacity of the edge with lower endpoint
    (x, y). Dual nodes are the unit cells plus one node left of the box and
    one right of it. Edges inside the bottom and top faces cannot be crossed
    because those faces are wholly source or sink.
    """
    left, right = "L", "R"

    def cell(i, j):
        if i < 0:
            return left
        if i >= k:
            return right
        return (i, j)

    adj: dict = {}

    def link(a, b, w):
        adj.setdefault(a, []).append((b, w))
        adj.setdefault(b, []).append((a, w))

    for x in range(k + 1):
        for y in range(m):
            link(cell(x - 1, y), cell(x, y), value(x, y, 1))
    for x in range(k):
        for y in range(1, m):
            link((x, y - 1), (x, y), value(x, y, 0))
    dist = {left: 0}
    heap = [(0, 0, left)]
    counter = itertools.count(1)
    while heap:
        dd, _, a = heapq.heappop(heap)
        if a == right:
            return dd
        if dd > dist.get(a, float("inf")):
            continue
        for b, w in adj.get(a, []):
            nd = dd + w
            if nd < dist.get(b, float("inf")):
                dist[b] = nd
                heapq.heappush(heap, (nd, next(counter), b))
    raise AssertionError("right side unreachable")
