import math

import numpy as np
import pytest

from conecausal.causal_graph import (
    BASE,
    ConeField,
    Digraph,
    Enlargement,
    VertexSet,
    f_future,
    is_k_causal,
    is_stably_causal_at,
    k_future,
    k_past,
    reach,
    recurrent_set,
    scc,
    strict_reach,
)
from conecausal.errors import ResolutionWarning
from conecausal.geometry import GridFactor, build_grid

TWO_PI = 2 * math.pi


def closure(n, src, dst):
    M = np.eye(n, dtype=bool)
    M[src, dst] = True
    while True:
        M2 = M | ((M.astype(np.int64) @ M.astype(np.int64)) > 0)
        if np.array_equal(M2, M):
            return M
        M = M2


@pytest.fixture
def ex1_8():
    grid = build_grid([GridFactor(True, 0, TWO_PI, 8), GridFactor(False, 0, TWO_PI * 7 / 8, 8)])
    return ConeField.from_text("v1>=0 && v2>=0", grid)


def offsets_of(G, v):
    st = G.grid.stencil(G.stencil_radius)
    a = G.indptr[v]
    b = G.indptr[v + 1]
    return {tuple(st.offsets[k]) for k in G.offset_ids[a:b]}


def test_vertex_set_ops():
    a = VertexSet.of(6, [0, 2, 4])
    b = VertexSet.of(6, [2, 3])
    assert len(a) == 3 and 2 in a and 1 not in a
    assert list(a | b) == [0, 2, 3, 4]
    assert list(a & b) == [2]
    assert list(a - b) == [0, 4]
    assert VertexSet.of(6, [2]) <= a
    assert len(~a) == 3
    assert not VertexSet.empty(6) and len(VertexSet.full(6)) == 6


def test_enlargement_order():
    assert Enlargement(0.1, 0) <= Enlargement(0.2, 1)
    assert not Enlargement(0.3, 0) <= Enlargement(0.2, 1)
    with pytest.raises(ValueError):
        Enlargement(-0.1)


def test_quadrant_offsets_base(ex1_8):
    G = ex1_8.graph(BASE, 1)
    grid = ex1_8.grid
    for v in range(grid.N):
        i, k = grid.multi_index(v)
        expect = {(1, 0), (0, 1), (1, 1)} if k < 7 else {(1, 0)}
        assert offsets_of(G, v) == expect


def test_quadrant_offsets_enlarged(ex1_8):
    G = ex1_8.graph(Enlargement(0.8), 1)
    v = ex1_8.grid.index((3, 3))
    assert (-1, 1) in offsets_of(G, v)
    assert (1, -1) in offsets_of(G, v)
    assert (-1, -1) not in offsets_of(G, v)


def test_degenerate_field_has_no_edges():
    grid = build_grid([GridFactor(False, 0, 1, 5), GridFactor(False, 0, 1, 5)])
    field = ConeField.from_text("v1 < 0 && v1 > 0", grid)
    G = field.graph(BASE, 1)
    assert G.num_edges == 0
    assert list(reach(G, 7)) == [7]
    assert list(k_future(field, 7)) == [7]
    assert not strict_reach(G, 7)
    assert is_k_causal(field)


def test_singular_everywhere_reaches_all():
    grid = build_grid([GridFactor(False, 0, 1, 6), GridFactor(True, 0, 1, 5)])
    field = ConeField.from_text("v1 >= v1", grid)
    G = field.graph(BASE, 1)
    assert len(reach(G, 0)) == grid.N
    assert len(recurrent_set(G)) == grid.N


def test_example1_reach_8x8_matches_closure(ex1_8):
    G = ex1_8.graph(BASE, 1)
    src, dst = G.edges()
    C = closure(G.n, src, dst)
    assert len(reach(G, 0)) == G.n
    for v in range(G.n):
        assert np.array_equal(reach(G, v).mask, C[v])


def test_strict_reach_cycles(ex1_8, mink33):
    G = ex1_8.graph(BASE, 1)
    assert all(v in strict_reach(G, v) for v in range(G.n))
    Gm = mink33.graph(BASE, 1)
    assert not any(v in strict_reach(Gm, v) for v in range(0, Gm.n, 7))


def test_chain_scc():
    G = Digraph(2, [0], [1])
    d = scc(G)
    assert d.count == 2 and not d.nontrivial.any()
    assert d.level[d.labels[0]] == 0 and d.level[d.labels[1]] == 1
    assert list(d.order) == [d.labels[0], d.labels[1]]


def test_self_loop_is_nontrivial():
    G = Digraph(3, [0, 1], [0, 2])
    assert list(recurrent_set(G)) == [0]


def test_scc_topological_order_respected():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(5, 80))
        adj = rng.random((n, n)) < 0.05
        src, dst = np.nonzero(adj)
        d = scc(Digraph(n, src, dst))
        pos = np.empty(d.count, dtype=int)
        pos[d.order] = np.arange(d.count)
        a, b = d.dag.edges()
        assert np.all(pos[a] < pos[b])
        assert np.all(d.level[b] > d.level[a])


def test_duality_and_transitivity(ex1_8):
    G = ex1_8.graph(Enlargement(0.3), 1)
    rng = np.random.default_rng(0)
    for x in rng.integers(G.n, size=10):
        fx = reach(G, int(x))
        for y in rng.integers(G.n, size=10):
            assert (int(y) in fx) == (int(x) in reach(G, int(y), "bwd"))
            if int(y) in fx:
                assert reach(G, int(y)) <= fx


def test_minkowski_enlarged_acyclic(mink33):
    d = mink33.graph(Enlargement(0.2), 2).sccs
    assert not d.nontrivial.any()
    assert is_stably_causal_at(mink33, 0.2, s=2)
    assert is_k_causal(mink33, 2)


def test_minkowski_light_wedge():
    grid = build_grid([GridFactor(False, 0, 1, 65), GridFactor(False, -0.5, 0.5, 65)])
    field = ConeField.from_text("v1 >= abs(v2)", grid)
    x = grid.index((32, 32))
    K = k_future(field, x, 1)
    m = grid.multi_indices
    wedge = (m[:, 0] >= 32) & (np.abs(m[:, 1] - 32) <= m[:, 0] - 32)
    assert np.array_equal(K.mask, wedge)
    P = k_past(field, x, 1)
    assert np.array_equal(P.mask, (m[:, 0] <= 32) & (np.abs(m[:, 1] - 32) <= 32 - m[:, 0]))


def test_singular_point_in_minkowski_is_recurrent():
    grid = build_grid([GridFactor(False, -1, 1, 17), GridFactor(False, -1, 1, 17)])
    # singular on the initial slice, where no path returns to it
    field = ConeField.from_text("v1 >= abs(v2) || ((x1 + 1)^2 + x2^2 <= 0)", grid)
    G = field.graph(Enlargement(0.1), 1)
    v = grid.index((0, 8))
    assert v not in strict_reach(G, v)
    assert list(recurrent_set(G)) == [v]


def test_example1_is_not_causal(ex1):
    assert not is_k_causal(ex1, 1)
    assert not is_stably_causal_at(ex1, 0.05, s=2)
    for theta in (0.05, 0.1, 0.2):
        assert len(recurrent_set(ex1.graph(Enlargement(theta), 2))) == ex1.grid.N


def test_example1_descent_needs_resolution(ex1):
    """On the coarse grid no descending stencil step lies within 0.15 rad of the quadrant."""
    grid = ex1.grid
    x = grid.index((3, 10))
    (_, F), = f_future(ex1, x, [0.15], s=2)
    assert len(F) == 32 * 23
    (_, F), = f_future(ex1, x, [0.35], s=2)
    assert len(F) == grid.N


def test_example1_full_future_when_descent_resolvable():
    grid = build_grid([GridFactor(True, 0, TWO_PI, 32), GridFactor(False, -2, 2, 129)])
    field = ConeField.from_text("v1>=0 && v2>=0", grid)
    G = field.graph(Enlargement(0.15), 2)
    assert G.sccs.count == 1
    (_, F), = f_future(field, grid.index((0, 64)), [0.15], s=2)
    assert len(F) == grid.N


def test_example2_winding_and_plane(ex2):
    G = ex2.graph(Enlargement(0.2), 2)
    assert not is_stably_causal_at(ex2, 0.2, s=2)
    assert len(recurrent_set(G)) > 0


def test_f_future_validation_and_nesting(mink33):
    with pytest.raises(ValueError):
        f_future(mink33, 0, [0.1, 0.2])
    with pytest.raises(ValueError):
        f_future(mink33, 0, [0.1, 0.0])
    x = mink33.grid.index((5, 16))
    sets = [S for _, S in f_future(mink33, x, [0.9, 0.5, 0.2, 0.05], s=1)]
    K = k_future(mink33, x, 1)
    assert all(a >= b for a, b in zip(sets, sets[1:]))
    assert K <= sets[-1]


def test_enlargement_monotone_edges(mink33):
    small = mink33.graph(Enlargement(0.3), 2)
    big = mink33.graph(Enlargement(0.6, 1), 2)
    a, b = small.edges()
    assert all(big.has_edge(x, y) for x, y in zip(a, b))


def test_resolution_warning_for_thin_cone():
    grid = build_grid([GridFactor(False, 0, 1, 5), GridFactor(False, 0, 1, 5)])
    field = ConeField.from_text("v1 >= 0 && 100*v2 >= v1 && 50*v2 <= v1", grid, samples=2048)
    with pytest.warns(ResolutionWarning):
        G = field.graph(BASE, 1)
    assert G.num_edges == 0


def test_is_stably_causal_requires_positive_theta(mink33):
    with pytest.raises(ValueError):
        is_stably_causal_at(mink33, 0.0)
