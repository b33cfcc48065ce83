"""Integer lattice geometry: boxes, windows, faces, planes and dense indexing.

Axes are numbered from 0, so the height axis of a d-dimensional box is
``d - 1``. Vertices of a rectangular region are indexed row-major; edges
are stored in axis-major blocks, each block indexed row-major by the lower
endpoint of the edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidSpecError, LatticeRangeError

Z_MODE = "Z"
L_MODE = "L"


@dataclass(frozen=True)
class Grid:
    """Rectangular vertex region ``prod [lo_i, hi_i]`` with all nearest-neighbour edges."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.lo) != len(self.hi) or not self.lo:
            raise InvalidSpecError("lo and hi must be non-empty and of equal length")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise InvalidSpecError(f"empty region lo={self.lo} hi={self.hi}")
        object.__setattr__(self, "lo", tuple(int(x) for x in self.lo))
        object.__setattr__(self, "hi", tuple(int(x) for x in self.hi))

    @property
    def d(self) -> int:
        return len(self.lo)

    @cached_property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @cached_property
    def n_vertices(self) -> int:
        return math.prod(self.shape)

    def block_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.shape)
        s[axis] -= 1
        return tuple(s)

    @cached_property
    def block_offsets(self) -> tuple[int, ...]:
        offs = [0]
        for a in range(self.d):
            offs.append(offs[-1] + math.prod(self.block_shape(a)))
        return tuple(offs)

    @cached_property
    def n_edges(self) -> int:
        return self.block_offsets[-1]

    @cached_property
    def strides(self) -> tuple[int, ...]:
        st = [1] * self.d
        for a in range(self.d - 2, -1, -1):
            st[a] = st[a + 1] * self.shape[a + 1]
        return tuple(st)

    # vertices -------------------------------------------------------------

    def contains(self, coords) -> np.ndarray:
        c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        return np.all((c >= np.array(self.lo)) & (c <= np.array(self.hi)), axis=1)

    def vertex_ids(self, coords) -> np.ndarray:
        c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        if not self.contains(c).all():
            raise LatticeRangeError("vertex outside region")
        rel = c - np.array(self.lo, dtype=np.int64)
        return rel @ np.array(self.strides, dtype=np.int64)

    def vertex_id(self, coord: Sequence[int]) -> int:
        return int(self.vertex_ids([coord])[0])

    def vertex_coords(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_vertices):
            raise LatticeRangeError("vertex id out of range")
        rel = np.stack(np.unravel_index(ids, self.shape), axis=-1)
        return rel + np.array(self.lo, dtype=np.int64)

    @cached_property
    def coords(self) -> np.ndarray:
        """(n_vertices, d) coordinates of all vertices, in id order."""
        return self.vertex_coords(np.arange(self.n_vertices))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        c = self.coords
        return np.any((c == np.array(self.lo)) | (c == np.array(self.hi)), axis=1)

    def vertices_of(self, sub: "Grid") -> np.ndarray:
        """Ids in this grid of every vertex of ``sub``, in ``sub`` id order."""
        return self.vertex_ids(sub.coords)

    def nd(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.shape)

    # edges ----------------------------------------------------------------

    def edge_ids(self, coords, axis) -> np.ndarray:
        """Ids of the edges from ``coords`` to ``coords + e_axis``."""
        c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        axis = np.broadcast_to(np.asarray(axis, dtype=np.int64), (c.shape[0],))
        out = np.empty(c.shape[0], dtype=np.int64)
        lo = np.array(self.lo, dtype=np.int64)
        for a in range(self.d):
            sel = axis == a
            if not sel.any():
                continue
            rel = c[sel] - lo
            bs = np.array(self.block_shape(a))
            if np.any(rel < 0) or np.any(rel >= bs):
                raise LatticeRangeError("edge outside region")
            out[sel] = self.block_offsets[a] + np.ravel_multi_index(rel.T, tuple(bs))
        if np.any((axis < 0) | (axis >= self.d)):
            raise LatticeRangeError("axis out of range")
        return out

    def edge_id(self, coord: Sequence[int], axis: int) -> int:
        return int(self.edge_ids([coord], [axis])[0])

    def edge_coords(self, ids) -> tuple[np.ndarray, np.ndarray]:
        """Lower endpoint coordinates and axis of each edge id."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_edges):
            raise LatticeRangeError("edge id out of range")
        axis = np.searchsorted(np.array(self.block_offsets), ids, side="right") - 1
        coords = np.empty((ids.size, self.d), dtype=np.int64)
        for a in range(self.d):
            sel = axis == a
            if sel.any():
                rel = np.stack(np.unravel_index(ids[sel] - self.block_offsets[a], self.block_shape(a)), axis=-1)
                coords[sel] = rel + np.array(self.lo, dtype=np.int64)
        return coords, axis

    @cached_property
    def edge_axis(self) -> np.ndarray:
        out = np.empty(self.n_edges, dtype=np.int64)
        for a in range(self.d):
            out[self.block_offsets[a]:self.block_offsets[a + 1]] = a
        return out

    @cached_property
    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays (u, v) of vertex ids with v = u + e_axis."""
        us, vs = [], []
        for a in range(self.d):
            idx = np.indices(self.block_shape(a)).reshape(self.d, -1)
            u = (idx.T @ np.array(self.strides, dtype=np.int64)).astype(np.int64)
            us.append(u)
            vs.append(u + self.strides[a])
        if not us:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        return np.concatenate(us), np.concatenate(vs)

    def edges_of(self, sub: "Grid") -> np.ndarray:
        """Ids in this grid of every edge of ``sub``, in ``sub`` id order."""
        c, a = sub.edge_coords(np.arange(sub.n_edges))
        return self.edge_ids(c, a) if sub.n_edges else np.zeros(0, np.int64)

    def induced_edges(self, vertex_mask: np.ndarray) -> np.ndarray:
        """Boolean edge mask: both endpoints in ``vertex_mask``."""
        u, v = self.endpoints
        vm = np.asarray(vertex_mask, dtype=bool)
        return vm[u] & vm[v]

    def incident_edges(self, vertex_id: int) -> np.ndarray:
        u, v = self.endpoints
        return np.flatnonzero((u == vertex_id) | (v == vertex_id))


@dataclass(frozen=True)
class BoxSpec:
    """The box ``prod [0, k_i] x [0, m]`` in dimension d."""

    d: int
    k: tuple[int, ...]
    m: int

    def __post_init__(self) -> None:
        k = tuple(int(x) for x in self.k)
        object.__setattr__(self, "k", k)
        if self.d < 2:
            raise InvalidSpecError(f"dimension must be at least 2, got {self.d}")
        if len(k) != self.d - 1:
            raise InvalidSpecError(f"expected {self.d - 1} side lengths, got {len(k)}")
        if any(x < 0 for x in k) or self.m < 0:
            raise InvalidSpecError("side lengths and height must be non-negative")

    @property
    def volume(self) -> int:
        return math.prod(self.k)

    def canonical(self) -> "BoxSpec":
        return BoxSpec(self.d, tuple(sorted(self.k)), self.m)

    @cached_property
    def grid(self) -> Grid:
        return Grid((0,) * self.d, (*self.k, self.m))

    @property
    def n_vertices(self) -> int:
        return self.grid.n_vertices

    @property
    def n_edges(self) -> int:
        return self.grid.n_edges

    def label(self) -> str:
        return f"d={self.d} k={'x'.join(map(str, self.k))} m={self.m}"


def build_box(d: int, k: Iterable[int], m: int) -> BoxSpec:
    return BoxSpec(int(d), tuple(k), int(m))


@dataclass(frozen=True)
class AmbientWindow:
    """A box padded by ``margin`` cells on every side; its boundary stands in for infinity."""

    box: BoxSpec
    margin: int | None = None

    def __post_init__(self) -> None:
        if self.margin is None:
            object.__setattr__(self, "margin", max(*self.box.k, self.box.m))
        if self.margin < 0:
            raise InvalidSpecError("margin must be non-negative")

    @cached_property
    def grid(self) -> Grid:
        r = self.margin
        return Grid(tuple(-r for _ in range(self.box.d)), tuple(x + r for x in (*self.box.k, self.box.m)))


def as_grid(region) -> Grid:
    if isinstance(region, Grid):
        return region
    return region.grid


def faces(box: BoxSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vertex ids (in the box grid) of the bottom face x_d = 0 and the top face x_d = m."""
    h = box.grid.coords[:, -1]
    return np.flatnonzero(h == 0), np.flatnonzero(h == box.m)


def region_faces(region) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of the bottom and top faces (lowest and highest last coordinate) of a region."""
    g = as_grid(region)
    h = g.coords[:, -1]
    return h == g.lo[-1], h == g.hi[-1]


def adjacency(u: Sequence[int], v: Sequence[int], mode: str = Z_MODE) -> bool:
    diff = np.abs(np.asarray(u) - np.asarray(v))
    if mode == Z_MODE:
        return int(diff.sum()) == 1
    if mode == L_MODE:
        return int(diff.max()) == 1
    raise InvalidSpecError(f"unknown adjacency mode {mode!r}")


def hyperplane(region, axis: int, coord: int) -> np.ndarray:
    """Vertex ids of the region's vertices with ``x_axis == coord``."""
    g = as_grid(region)
    if not 0 <= axis < g.d:
        raise LatticeRangeError(f"axis {axis} out of range for d={g.d}")
    if not g.lo[axis] <= coord <= g.hi[axis]:
        raise LatticeRangeError(f"coordinate {coord} outside [{g.lo[axis]}, {g.hi[axis]}]")
    return np.flatnonzero(g.coords[:, axis] == coord)


def plane_edges(region, axis: int, coord: int) -> np.ndarray:
    """Edge ids lying inside the plane ``x_axis == coord``."""
    g = as_grid(region)
    mask = np.zeros(g.n_vertices, dtype=bool)
    mask[hyperplane(g, axis, coord)] = True
    return np.flatnonzero(g.induced_edges(mask))


def neighbourhood_structure(d: int, mode: str) -> np.ndarray:
    """Structuring element for vertex sets as boolean d-arrays."""
    if mode == L_MODE:
        return np.ones((3,) * d, dtype=bool)
    s = np.zeros((3,) * d, dtype=bool)
    c = (1,) * d
    s[c] = True
    for a in range(d):
        for o in (0, 2):
            idx = list(c)
            idx[a] = o
            s[tuple(idx)] = True
    return s
