import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticeflow.capacity import DEFAULT_SCALE, bernoulli, dirac, field_from_values, sample_field, uniform
from latticeflow.cluster import zero_cutset_exists
from latticeflow.errors import InconsistencyError, InvalidSpecError, ResourceError
from latticeflow.flow import (canonical_min_cut, max_flow_box, max_flow_to_boundary, min_cut_from_flow,
                              net_outflow, verify_flow)
from latticeflow.lattice import AmbientWindow, build_box, faces

from oracles import min_cut_by_partitions

S = DEFAULT_SCALE


def test_unit_square_grid():
    box = build_box(2, (2,), 2)
    f = sample_field(box.grid, dirac(1), 0)
    res = max_flow_box(box, f)
    assert res.value == 3 * S
    cut = min_cut_from_flow(res)
    assert cut.passage_time == 3 * S
    assert cut.n_edges == 3
    assert set(box.grid.edge_axis[cut.edges].tolist()) == {1}


def test_closed_layer_blocks_everything():
    box = build_box(2, (4,), 4)
    f = sample_field(box.grid, uniform(1, 2), 5)
    vals = f.values.copy()
    c, a = box.grid.edge_coords(np.arange(box.n_edges))
    layer = (a == 1) & (c[:, 1] == 2)
    vals[layer] = 0
    res = max_flow_box(box, f.with_values(vals))
    assert res.value == 0
    cut = min_cut_from_flow(res)
    assert cut.passage_time == 0
    assert np.all(vals[cut.edges] == 0)


def test_matches_vertex_partition_enumeration():
    box = build_box(2, (4,), 4)
    src = np.zeros(box.n_vertices, bool)
    snk = np.zeros(box.n_vertices, bool)
    f0, fm = faces(box)
    src[f0], snk[fm] = True, True
    for r in range(4):
        f = sample_field(box.grid, bernoulli(0.6, 2), 31, r, scale=4)
        assert max_flow_box(box, f).value == min_cut_by_partitions(box.grid, f.values, src, snk)


def test_to_boundary_all_closed():
    box = build_box(2, (2,), 2)
    win = AmbientWindow(box, 3)
    f = sample_field(win, bernoulli(0), 0)
    assert max_flow_to_boundary(box, f, 3).value == 0
    assert zero_cutset_exists(f, box)


def test_origin_to_boundary():
    origin = build_box(2, (0,), 0)
    f = sample_field(AmbientWindow(origin, 1), dirac(1), 0)
    assert max_flow_to_boundary(origin, f, 1).value == 4 * S


def test_larger_margin_never_increases_value():
    box = build_box(2, (2,), 2)
    for r in range(100):
        f = sample_field(AmbientWindow(box, 4), bernoulli(0.55), 17, r, scale=1)
        assert max_flow_to_boundary(box, f, 2).value >= max_flow_to_boundary(box, f, 4).value


def test_verify_flow_accepts_solver_output_and_catches_tampering():
    box = build_box(2, (5,), 5)
    f = sample_field(box.grid, uniform(0, 1), 3)
    res = max_flow_box(box, f)
    assert verify_flow(res, f)
    busy = np.flatnonzero(res.edge_flow != 0)
    assert busy.size
    ef = res.edge_flow.copy()
    inner = ~(res.sources | res.sinks)
    u, v = box.grid.endpoints
    e = next(int(e) for e in busy if inner[u[e]] or inner[v[e]])
    ef[e] += 1
    bad = verify_flow(res.with_edge_flow(ef), f)
    assert not bad
    assert bad.vertex is not None
    assert any("conservation" in p for p in bad.violations)


def test_zero_flow_is_valid():
    box = build_box(2, (3,), 3)
    f = sample_field(box.grid, bernoulli(0), 0)
    res = max_flow_box(box, f)
    assert res.value == 0 and verify_flow(res, f)


def test_random_min_cuts_match_flow_value():
    for r in range(100):
        d = 2 + r % 2
        box = build_box(d, (3,) * (d - 1), 3)
        f = sample_field(box.grid, bernoulli(0.7, 1) if r % 3 else uniform(0, 2), 8, r, scale=2**10)
        res = max_flow_box(box, f)
        assert verify_flow(res, f)
        assert min_cut_from_flow(res).passage_time == res.value


def test_non_maximal_flow_rejected():
    box = build_box(2, (2,), 2)
    f = sample_field(box.grid, dirac(1), 0)
    res = max_flow_box(box, f)
    with pytest.raises(InconsistencyError):
        min_cut_from_flow(res.with_edge_flow(np.zeros_like(res.edge_flow)))


def test_degenerate_and_oversized_boxes():
    with pytest.raises(InvalidSpecError):
        box = build_box(2, (3,), 0)
        max_flow_box(box, sample_field(box.grid, dirac(1), 0))
    box = build_box(2, (30,), 30)
    with pytest.raises(ResourceError):
        max_flow_box(box, sample_field(box.grid, dirac(1), 0), max_vertices=100)


def test_orientation_and_replay():
    box = build_box(2, (4,), 4)
    f = sample_field(box.grid, uniform(0, 1), 12)
    a = max_flow_box(box, f)
    b = max_flow_box(box, f)
    assert np.array_equal(a.edge_flow, b.edge_flow)
    e = int(np.flatnonzero(a.edge_flow)[0])
    mag, sign = a.flow(e)
    assert mag == abs(int(a.edge_flow[e])) and sign in (-1, 1)


def test_net_outflow_accounts_for_value():
    box = build_box(3, (2, 2), 3)
    f = sample_field(box.grid, uniform(0, 1), 4)
    res = max_flow_box(box, f)
    out = net_outflow(res)
    assert out[res.sources].sum() == res.value == -out[res.sinks].sum()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6), st.sampled_from([0.3, 0.5, 0.8, 1.0]))
def test_canonical_cut_is_minimum_and_minimal(k, m, seed, p):
    box = build_box(2, (k,), m)
    f = sample_field(box.grid, bernoulli(p, 1), seed, scale=1)
    res, cut = canonical_min_cut(box.grid, f)
    assert cut.passage_time == res.value
    assert cut.self_avoiding
    assert verify_flow(res, f)
