"""Error metrics, forward prediction, and aggregation rules."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothid import dynamics, metrics
from smoothid.basis import build_table
from smoothid.exceptions import AggregationFailure
from smoothid.sparse_regression import SparseModel


def exact_model(system, degree):
    table = build_table(system.dim, degree)
    xi = np.column_stack(
        [metrics.coefficient_vector(table, terms) for terms in dynamics.true_coefficient_map(system)]
    )
    return SparseModel.build(table, xi)


# ---------------------------------------------------------------- relative_frobenius


def test_relative_frobenius_examples():
    rng = np.random.default_rng(0)
    truth = rng.standard_normal((3, 40))
    assert metrics.relative_frobenius(truth, truth) == 0.0
    assert metrics.relative_frobenius(2.0 * truth, truth) == pytest.approx(1.0, rel=1e-14)
    # est = truth + delta*E with ||E||_F = ||truth||_F gives exactly delta
    E = rng.standard_normal(truth.shape)
    E *= np.linalg.norm(truth) / np.linalg.norm(E)
    delta = 0.37
    assert metrics.relative_frobenius(truth + delta * E, truth) == pytest.approx(delta, rel=1e-12)


def test_relative_frobenius_rejects_zero_truth_and_mismatch():
    with pytest.raises(ValueError):
        metrics.relative_frobenius(np.ones((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        metrics.relative_frobenius(np.ones((2, 3)), np.ones((3, 2)))


@given(st.integers(-40, 40).filter(lambda k: k != 0), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_relative_frobenius_scale_invariance(k, seed):
    # powers of two scale both norms exactly, so the ratio cannot move
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal((2, 15))
    est = truth + rng.standard_normal((2, 15))
    c = 2.0**k
    assert metrics.relative_frobenius(c * est, c * truth) == metrics.relative_frobenius(est, truth)


# ---------------------------------------------------------------- coefficient_error


def test_coefficient_error_examples():
    xi_true = np.array([0.0, -10.0, 10.0, 0.0, 0.0])
    assert metrics.coefficient_error(xi_true.copy(), xi_true) == 0.0
    assert metrics.coefficient_error(np.zeros(5), xi_true) == pytest.approx(1.0, rel=1e-14)
    # flipping the sign of a single coefficient c gives 2|c|/||xi*||
    flipped = xi_true.copy()
    flipped[2] = -flipped[2]
    want = 2.0 * abs(xi_true[2]) / np.linalg.norm(xi_true)
    assert metrics.coefficient_error(flipped, xi_true) == pytest.approx(want, rel=1e-14)


def test_coefficient_error_rejects_zero_truth():
    with pytest.raises(ValueError):
        metrics.coefficient_error(np.ones(4), np.zeros(4))


def test_coefficient_vector_alignment():
    table = build_table(2, 2)
    xi = metrics.coefficient_vector(table, {(1, 0): 2.0, (0, 1): -1.0})
    assert xi[table.index_of((1, 0))] == 2.0
    assert xi[table.index_of((0, 1))] == -1.0
    assert np.count_nonzero(xi) == 2
    with pytest.raises(ValueError):
        metrics.coefficient_vector(table, {(3, 0): 1.0})


def test_support_mismatch_counts_disagreements():
    a = np.array([0.0, 1.0, 0.0, 2.0])
    b = np.array([0.0, 0.0, 3.0, 1.0])
    assert metrics.support_mismatch(a, a) == 0
    assert metrics.support_mismatch(a, b) == 2
    assert metrics.support_mismatch(np.zeros(4), b) == 2


# ---------------------------------------------------------------- predict


def test_predict_zero_model_constant():
    table = build_table(2, 2)
    model = SparseModel.build(table, np.zeros((table.p, 2)))
    out = metrics.predict(model, [1.5, -0.5], (0.0, 1.0), 0.1)
    assert out.ok and not out.blew_up
    assert np.array_equal(out.traj.X, np.tile([[1.5], [-0.5]], out.traj.t.size))


def test_predict_exact_lorenz_matches_reference():
    system = dynamics.lorenz63()
    preset = dynamics.benchmark("lorenz63")
    model = exact_model(system, 2)
    ref = dynamics.integrate_rk4(system, preset.x0, 0.0, 8.0, preset.dt)
    out = metrics.predict(model, preset.x0, (0.0, 8.0), preset.dt, training_amplitude=float(np.abs(ref.X).max()))
    assert out.ok
    assert np.array_equal(out.traj.t, ref.t)
    assert metrics.relative_frobenius(out.traj.X, ref.X) < 1e-3


def test_predict_shares_integrator_code_path():
    # same RHS closure through rk4_path must give bit-identical samples
    system = dynamics.duffing()
    preset = dynamics.benchmark("duffing")
    model = exact_model(system, 3)
    x0 = dynamics.window_start_state(preset)
    out = metrics.predict(model, x0, (preset.t_train[0], 5.0), preset.dt, training_amplitude=10.0)
    t = preset.t_train[0] + preset.dt * np.arange(out.traj.t.size)
    direct = dynamics.rk4_path(metrics.model_rhs(model), x0, t)
    assert np.array_equal(out.traj.X, direct)


def test_predict_flags_spurious_cubic_feedback():
    system = dynamics.lorenz63()
    preset = dynamics.benchmark("lorenz63")
    model = exact_model(system, 3)
    xi = model.xi.copy()
    xi[model.table.index_of((3, 0, 0)), 0] = 10.0  # strong positive x1^3 feedback
    bad = SparseModel.build(model.table, xi)
    train = dynamics.integrate_rk4(system, preset.x0, *preset.t_train, preset.dt)
    out = metrics.predict(bad, preset.x0, (0.0, 20.0), preset.dt, training_amplitude=float(np.abs(train.X).max()))
    assert out.blew_up and out.traj is None
    assert out.t_blow_up is not None and out.t_blow_up < 20.0


def test_predict_threshold_uses_training_amplitude():
    # xdot = x on one state: growth passes 1e3*amp at t = ln(1e3)
    table = build_table(1, 1)
    model = SparseModel.build(table, metrics.coefficient_vector(table, {(1,): 1.0})[:, None])
    out = metrics.predict(model, [1.0], (0.0, 10.0), 0.01, training_amplitude=1.0)
    assert out.blew_up
    assert out.t_blow_up == pytest.approx(np.log(1e3), abs=0.02)
    ok = metrics.predict(model, [1.0], (0.0, 5.0), 0.01, training_amplitude=1e6)
    assert ok.ok


def test_predict_validates_arguments():
    table = build_table(2, 1)
    model = SparseModel.build(table, np.zeros((table.p, 2)))
    with pytest.raises(ValueError):
        metrics.predict(model, [1.0, 2.0, 3.0], (0.0, 1.0), 0.1)
    with pytest.raises(ValueError):
        metrics.predict(model, [1.0, 2.0], (0.0, 1.0), -0.1)
    with pytest.raises(ValueError):
        metrics.predict(model, [1.0, 2.0], (1.0, 0.0), 0.1)


# ---------------------------------------------------------------- aggregate


def report(e_pred=None, excluded=False, reason=""):
    # binary-exact values so identical-record means come out bit-equal
    return metrics.ErrorReport(0.25, 0.5, (0.75, 1.25), e_pred=e_pred, excluded=excluded, reason=reason)


def test_errorreport_validation():
    with pytest.raises(ValueError):
        report(e_pred=0.5, excluded=True, reason="blow-up")
    with pytest.raises(ValueError):
        metrics.ErrorReport(-0.1, 0.2, (0.3,))


def test_aggregate_identical_values():
    out = metrics.aggregate([report(e_pred=0.75) for _ in range(6)], cell="lorenz/0.01")
    assert out.included == 6 and out.excluded == 0
    assert out.mean["e_X"] == 0.25 and out.std["e_X"] == 0.0
    assert out.mean["e_pred"] == 0.75 and out.std["e_pred"] == 0.0
    assert np.array_equal(out.mean["e_xi"], [0.75, 1.25])


def test_aggregate_exclusion_shrinks_denominator():
    vals = [1.0, 2.0, 3.0, 4.0, 5.0]
    recs = [metrics.ErrorReport(v, v, (v,), e_pred=v) for v in vals[:-1]]
    recs.append(metrics.ErrorReport(vals[-1], vals[-1], (vals[-1],), excluded=True, reason="blow-up"))
    out = metrics.aggregate(recs, cell="c")
    assert out.included == 4 and out.excluded == 1
    assert out.mean["e_pred"] == pytest.approx(np.mean(vals[:-1]))
    assert out.std["e_pred"] == pytest.approx(np.std(vals[:-1]))


def test_aggregate_all_excluded_names_cell():
    recs = [report(excluded=True, reason="blow-up") for _ in range(3)]
    with pytest.raises(AggregationFailure, match="duffing/0.1/white"):
        metrics.aggregate(recs, cell="duffing/0.1/white")


@given(st.lists(st.integers(-10**6, 10**6), min_size=1, max_size=48))
@settings(max_examples=60, deadline=None)
def test_aggregate_mean_between_min_and_max(values):
    recs = [metrics.ErrorReport(0.0, 0.0, (0.0,), e_pred=float(abs(v))) for v in values]
    out = metrics.aggregate(recs)
    got = out.mean["e_pred"]
    assert min(abs(v) for v in values) <= got <= max(abs(v) for v in values)
