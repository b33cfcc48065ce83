import numpy as np
import pytest

from latticeflow.capacity import bernoulli, dirac, field_from_values, sample_field
from latticeflow.cluster import (boundary_tail, exterior_boundary, fewest_edge_min_cut, open_cluster,
                                 write_tail_csv, zero_cutset_exists)
from latticeflow.errors import InfiniteClusterError
from latticeflow.lattice import AmbientWindow, Grid, build_box

ORIGIN = build_box(2, (0,), 0)


def window(r=3):
    return AmbientWindow(ORIGIN, r).grid


def field_with_open(g: Grid, edges):
    vals = np.zeros(g.n_edges, dtype=np.int64)
    for coord, axis in edges:
        vals[g.edge_id(coord, axis)] = 1
    return field_from_values(g, vals)


def test_all_closed_cluster_is_the_seed():
    g = window()
    cl = open_cluster(field_with_open(g, []), ORIGIN.grid)
    assert cl.size == 1 and not cl.touches_window_boundary


def test_all_open_cluster_is_the_window():
    g = window()
    cl = open_cluster(sample_field(g, dirac(1), 0), ORIGIN.grid)
    assert cl.size == g.n_vertices and cl.touches_window_boundary
    with pytest.raises(InfiniteClusterError):
        exterior_boundary(cl)


def test_single_open_edge():
    g = window()
    cl = open_cluster(field_with_open(g, [((0, 0), 0)]), ORIGIN.grid)
    assert cl.size == 2


def test_isolated_origin_boundary():
    g = window()
    bs = exterior_boundary(open_cluster(field_with_open(g, []), ORIGIN.grid))
    assert len(bs.delta_e) == 4
    assert np.array_equal(bs.delta, bs.delta_e)
    assert bs.exterior_connected
    assert bs.partial.sum() == 8


def test_two_vertex_cluster_boundary():
    g = window()
    bs = exterior_boundary(open_cluster(field_with_open(g, [((0, 0), 0)]), ORIGIN.grid))
    assert len(bs.delta_e) == 6


def test_cavity_edges_are_not_exterior():
    g = window(4)
    ring = [((0, 0), 0), ((1, 0), 0), ((0, 2), 0), ((1, 2), 0),
            ((0, 0), 1), ((0, 1), 1), ((2, 0), 1), ((2, 1), 1)]
    bs = exterior_boundary(open_cluster(field_with_open(g, ring), ORIGIN.grid))
    centre = g.vertex_id((1, 1))
    u, v = g.endpoints
    hole = set(np.flatnonzero((u == centre) | (v == centre)).tolist())
    assert hole <= set(bs.delta.tolist())
    assert not hole & set(bs.delta_e.tolist())
    assert len(bs.delta) - len(bs.delta_e) == 4


def test_zero_cutset_trivial_cases():
    box = build_box(2, (2,), 2)
    g = AmbientWindow(box, 3).grid
    assert zero_cutset_exists(sample_field(g, bernoulli(0), 0), box)
    assert not zero_cutset_exists(sample_field(g, dirac(1), 0), box)


def test_zero_cutset_common_when_subcritical():
    box = build_box(2, (2,), 2)
    g = AmbientWindow(box, 32).grid
    hits = sum(zero_cutset_exists(sample_field(g, bernoulli(0.2), 5, r), box) for r in range(200))
    assert hits >= 190


def test_boundary_tail_closed_is_point_mass():
    tail = boundary_tail(bernoulli(0), 20, margin=3)
    assert set(tail.sizes.tolist()) == {4}
    assert set(tail.min_cut_sizes.tolist()) == {4}
    assert tail.discarded == 0


def test_boundary_tail_rows_and_csv(tmp_path):
    tail = boundary_tail(bernoulli(0.3), 40, margin=6, master_seed=3)
    rows = tail.rows()
    assert rows[0][2] == len(tail.sizes)
    assert all(a[2] >= b[2] for a, b in zip(rows, rows[1:]))
    write_tail_csv(tmp_path / "tail.csv", tail)
    assert (tmp_path / "tail.csv").read_text().splitlines()[0] == "n,count,cumulative"


def test_boundary_tail_decays_when_subcritical():
    tail = boundary_tail(bernoulli(0.1), 1000, margin=8, master_seed=11)
    assert not tail.insufficient
    assert tail.report.slope < 0


def test_fewest_edge_min_cut_breaks_ties_by_size():
    g = window(2)
    f = field_with_open(g, [((0, 0), 0)])
    # zero-cost cuts: the 6 edges around the pair beat the 12 around the window
    assert fewest_edge_min_cut(f, ORIGIN, 2) == 6
