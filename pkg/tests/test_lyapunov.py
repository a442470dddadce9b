
import numpy as np
import pytest

from conecausal.analysis import ScalarField, check_causal, classify_neutral, eval_field
from conecausal.causal_graph import BASE, ConeField, Enlargement, VertexSet, recurrent_set
from conecausal.errors import NoStrictBin, NotStrict
from conecausal.geometry import GridFactor, build_grid
from conecausal.lyapunov import (
    StepSpec,
    approximate,
    complete_lyapunov,
    pick_strict_value,
    slab_index,
    smooth_field,
    step_lyapunov,
    trapping_closure,
    verify_lyapunov,
)


@pytest.fixture(scope="module")
def segment():
    grid = build_grid([GridFactor(False, -1, 1, 41)])
    return ConeField.from_text("v1 >= 0", grid)


def test_two_vertex_chain():
    grid = build_grid([GridFactor(False, 0, 1, 2)])
    field = ConeField.from_text("v1 >= 0", grid)
    tau = complete_lyapunov(field.graph())
    assert list(tau.values) == [0.0, 1.0]


def test_complete_lyapunov_minkowski(mink33):
    G = mink33.graph(Enlargement(0.1), 2)
    tau = complete_lyapunov(G)
    rep = verify_lyapunov(tau, mink33.graph(BASE, 2), recurrent_set(G))
    assert rep.passed and rep.margin > 0 and not rep.critical
    assert tau.values.min() == 0 and tau.values.max() == 1


def test_complete_lyapunov_constant_on_sccs(ex1):
    G = ex1.graph(Enlargement(0.1), 2)
    tau = complete_lyapunov(G)
    labels = G.sccs.labels
    for c in np.unique(labels):
        assert np.ptp(tau.values[labels == c]) == 0
    assert check_causal(tau, G) == []


def test_trapping_closure(mink33):
    G = mink33.graph(Enlargement(0.1), 2)
    seed = VertexSet(mink33.grid.coords[:, 0] >= 0.5)
    A = trapping_closure(G, seed)
    assert seed <= A
    src, dst = G.edges()
    assert not np.any(A.mask[src] & ~A.mask[dst])
    assert not trapping_closure(G, VertexSet.empty(G.n))


def test_step_segment(segment):
    f = eval_field("x1", segment.grid)
    tau = step_lyapunov(f, StepSpec(-0.5, 0.0, 0.5), segment.graph(Enlargement(0.05)), segment.graph())
    x = segment.grid.coords[:, 0]
    assert np.all(tau.values[x <= -0.5] == -0.5)
    assert np.all(tau.values[x >= 0.5] == 0.5)
    assert np.all(np.diff(tau.values) >= 0)
    band = (tau.values > -0.5) & (tau.values < 0.5)
    assert np.all(np.diff(tau.values[band]) > 0)


def test_step_minkowski(mink):
    G0, G1 = mink.graph(BASE, 2), mink.graph(Enlargement(0.1), 2)
    f = eval_field("x1", mink.grid)
    spec = StepSpec(0.25, 0.5, 0.75)
    tau = step_lyapunov(f, spec, G1, G0)
    assert check_causal(tau, G1) == []
    v = tau.values
    assert np.all(v[f.values >= 0.75] == 0.75) and np.all(v[f.values <= 0.25] == 0.25)
    src, dst = G1.edges()
    inband = (v[src] > 0.25) & (v[src] < 0.75) & (v[dst] > 0.25) & (v[dst] < 0.75)
    assert inband.any() and np.all(v[dst][inband] > v[src][inband])


def test_step_rejects_non_strict(ex1):
    f = eval_field("x2", ex1.grid)
    for spec in [StepSpec(-0.5, 0.0, 0.5), StepSpec(-0.5, 0.01, 0.5), StepSpec(1.0, 1.3, 1.6)]:
        with pytest.raises(NotStrict):
            step_lyapunov(f, spec, ex1.graph(Enlargement(0.05), 2), ex1.graph(BASE, 2))


def test_step_rejects_oversized_theta(mink33):
    # past-pointing steps are admitted once theta exceeds pi/4 + pi/2
    f = eval_field("x1", mink33.grid)
    with pytest.raises(NotStrict):
        step_lyapunov(f, StepSpec(0.25, 0.5, 0.75), mink33.graph(Enlargement(2.4), 1), mink33.graph(BASE, 1))


def test_stepspec_order():
    with pytest.raises(ValueError):
        StepSpec(0, 0, 1)


def test_slab_index_boundaries():
    vals = np.array([0.3, 0.1 * 3, 0.29999999999999993, -0.2, 0.0])
    k = slab_index(vals, 0.1)
    assert np.all(k * 0.1 <= vals) and np.all(vals < (k + 1) * 0.1)


def test_approximate_minkowski(mink):
    G0, G1 = mink.graph(BASE, 2), mink.graph(Enlargement(0.1), 2)
    f = eval_field("x1", mink.grid)
    tau, rep = approximate(f, 0.1, G1, G0)
    assert rep.sup_error < 0.1 and not rep.decreasing_edges
    assert check_causal(tau, G1) == []
    # glue consistency: exact multiples of eps land on their slab value
    on = np.isclose(f.values, np.round(f.values / 0.1) * 0.1) & (slab_index(f.values, 0.1) * 0.1 == f.values)
    assert np.all(tau.values[on] == f.values[on])
    tau_r, rep_r = approximate(f, 0.1, G1, G0, add_regularizer=True)
    assert rep_r.sup_error < 0.2 and rep_r.margin > 0 and rep_r.passed
    assert not classify_neutral(tau_r, G0).neutral
    # unregularized plateaus are critical, and neutral points are among them
    assert classify_neutral(tau, G0).neutral <= rep.critical


def test_approximate_threads_deterministic(mink33):
    G0, G1 = mink33.graph(BASE, 2), mink33.graph(Enlargement(0.1), 2)
    f = eval_field("x1", mink33.grid)
    a, _ = approximate(f, 0.1, G1, G0, workers=1)
    b, _ = approximate(f, 0.1, G1, G0, workers=4)
    assert np.array_equal(a.values, b.values)


def test_approximate_constant(mink33):
    f = eval_field("2", mink33.grid)
    tau, rep = approximate(f, 0.1, mink33.graph(Enlargement(0.1), 2), mink33.graph(BASE, 2))
    assert np.array_equal(tau.values, f.values) and rep.sup_error == 0


def test_approximate_example1_refuses(ex1):
    f = eval_field("x2", ex1.grid)
    with pytest.raises(NoStrictBin):
        approximate(f, 0.25, ex1.graph(Enlargement(0.05), 2), ex1.graph(BASE, 2))


def test_approximate_eps_too_small(mink33):
    f = eval_field("x1", mink33.grid)
    with pytest.raises(ValueError):
        approximate(f, 0.001, mink33.graph(Enlargement(0.1), 2), mink33.graph(BASE, 2))


def test_pick_strict_value_tie_goes_low():
    from conecausal.analysis import ValueBins

    bins = ValueBins(0.0, 0.1, np.zeros(10, bool), np.array([0, 1, 0, 1, 0, 0, 0, 0, 0, 0], bool), 1.0)
    assert pick_strict_value(bins, 0.0, 0.4) == pytest.approx(0.15)
    assert pick_strict_value(bins, 0.5, 0.9) is None
    assert pick_strict_value(bins, 0.95, 1.2) == pytest.approx(1.1)


def test_verify_example2_plane(ex2):
    G0 = ex2.graph(BASE, 2)
    f = eval_field("x2", ex2.grid)
    rep = verify_lyapunov(f, G0, VertexSet.empty(G0.n), delta_0=1e-6)
    src, dst = G0.edges()
    plane = np.abs(ex2.grid.coords[:, 2]) < 1e-12
    flat = set(zip(*[a.tolist() for a in (src, dst)]))
    weak = set(rep.weak_edges)
    zero = {(a, b) for a, b in flat if f[b] - f[a] == 0}
    assert weak == zero
    assert all(plane[a] and plane[b] for a, b in weak)
    assert not rep.decreasing_edges


def test_verify_constant_vacuous(ex1):
    G0 = ex1.graph(BASE, 2)
    rep = verify_lyapunov(eval_field("1", ex1.grid), G0, VertexSet.full(G0.n), 1e-6)
    assert rep.passed and rep.margin == float("inf")


def test_smooth_constant_and_linear():
    grid = build_grid([GridFactor(False, 0, 1, 21), GridFactor(True, 0, 1, 16)])
    c = ScalarField(grid, np.full(grid.N, 3.0))
    assert np.allclose(smooth_field(c, 2).values, 3.0, atol=1e-12)
    f = eval_field("2*x1 + 1", grid)
    s = smooth_field(f, 2).values.reshape(grid.shape)
    assert np.allclose(s[2:-2], f.values.reshape(grid.shape)[2:-2], atol=1e-12)
    with pytest.raises(ValueError):
        smooth_field(f, 0)


def test_smooth_staircase_keeps_margin(mink):
    G0, G1 = mink.graph(BASE, 2), mink.graph(Enlargement(0.1), 2)
    f = eval_field("x1", mink.grid)
    tau, rep = approximate(f, 0.1, G1, G0, add_regularizer=True)
    s = smooth_field(tau, 2)
    rep_s = verify_lyapunov(s, G0, recurrent_set(G1))
    assert rep_s.passed and 0 < rep_s.margin
