import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbfal.errors import MissingDerivativeHistory, NonMonotoneTime, QueryOutsideSpan
from cbfal.history import (CUBIC_HERMITE, LINEAR, HistoryWindow, InitialHistory, sample_lags,
                           window_from_arrays)
from cbfal.integrator import simulate
from cbfal import scenarios as S


def filled(fn, dfn, t_end=3.0, dt=1e-3, interp=CUBIC_HERMITE, max_lag=1.0, prune=False):
    w = HistoryWindow(1, max_lag, interp=interp, prune=prune)
    for k in range(int(round(t_end / dt)) + 1):
        t = k * dt
        w.append(t, [fn(t)], [dfn(t)])
    return w


def test_constant_history_any_lag():
    w = HistoryWindow.seeded(InitialHistory.constant([0.4]), 1.0, 1e-3)
    w.append(0.0, [0.4], [0.0])
    for lag in (0.0, 0.2345, 0.5, 1.0):
        assert w.eval_state(0.0, lag) == pytest.approx([0.4], abs=0)
        assert np.all(w.eval_derivative(0.0, lag) == 0.0)


def test_lag_zero_returns_sample_exactly():
    w = filled(np.sin, np.cos)
    t = 1.234
    assert w.eval_state(t, 0.0)[0] == np.sin(t)


@pytest.mark.parametrize("interp", [LINEAR, CUBIC_HERMITE])
def test_linear_function_mid_cell(interp):
    w = filled(lambda t: t, lambda t: 1.0, interp=interp)
    t = 2.0004567
    assert abs(w.eval_state(t, 0.5)[0] - (t - 0.5)) <= 1e-12


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.0, 1.0))
def test_hermite_reproduces_cubics(a, b, c, d, lag):
    p = lambda t: a + b * t + c * t * t + d * t ** 3
    dp = lambda t: b + 2 * c * t + 3 * d * t * t
    w = filled(p, dp, t_end=1.5, dt=1e-2)
    t = 1.5
    scale = 1 + abs(a) + abs(b) + abs(c) + abs(d)
    # queries within 1e-9 grid cells snap to the stored sample
    assert abs(w.eval_state(t, lag)[0] - p(t - lag)) <= 1e-10 * scale


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.0, 1.0))
def test_linear_reproduces_lines(a, b, lag):
    w = filled(lambda t: a + b * t, lambda t: b, t_end=1.5, dt=1e-2, interp=LINEAR)
    assert abs(w.eval_state(1.5, lag)[0] - (a + b * (1.5 - lag))) <= 1e-12 * (1 + abs(a) + abs(b))


def test_derivative_channel_is_stored_not_differenced():
    # derivative channel deliberately inconsistent with the state channel
    w = filled(np.sin, lambda t: 7.0)
    assert w.eval_derivative(2.0, 0.3)[0] == 7.0


def test_derivative_right_continuous_at_jump():
    w = HistoryWindow(1, 1.0, prune=False)
    for k in range(11):
        t = k * 0.1
        w.append(t, [t], [0.0 if t < 0.5 - 1e-12 else 1.0])
    assert w.derivative_at(0.5)[0] == 1.0
    assert w.derivative_at(0.5 - 1e-3)[0] < 1.0


def test_derivative_along_uncontrolled_case1():
    sc = S.build("case1", {"filter.enabled": False, "t_end": 2.5})
    traj = simulate(sc.plant, None, sc.initial, sc.sim, monitor=sc.monitor)
    w = traj.window
    for t in (1.5, 2.0):
        assert w.eval_derivative(t, 1.0)[0] == pytest.approx(w.eval_state(t, 1.0)[0] ** 3, rel=1e-14)
    # off grid the derivative channel is interpolated linearly: O(dt^2)
    assert w.eval_derivative(2.4995, 1.0)[0] == pytest.approx(w.eval_state(2.4995, 1.0)[0] ** 3, rel=1e-6)


def test_append_errors_and_first_sample():
    w = HistoryWindow(2, 1.0)
    w.append(0.0, [1, 2], [0, 0])
    assert len(w) == 1
    with pytest.raises(NonMonotoneTime):
        w.append(0.0, [1, 2], [0, 0])
    with pytest.raises(NonMonotoneTime):
        w.append(-1.0, [1, 2], [0, 0])


def test_pruned_span():
    tau, dt = 1.0, 1e-2
    w = filled(np.sin, np.cos, t_end=2 * tau, dt=dt, max_lag=tau, prune=True)
    assert tau - 1e-12 <= w.span <= tau + w.stencil * dt + 1e-12
    # a max_lag query still succeeds after warm-up
    w.eval_state(w.last_time, tau)


def test_query_outside_span():
    w = filled(np.sin, np.cos, t_end=3.0, dt=1e-2, prune=True)
    with pytest.raises(QueryOutsideSpan):
        w.state_at(0.5)
    with pytest.raises(MissingDerivativeHistory):
        w.derivative_at(0.5)
    with pytest.raises(QueryOutsideSpan):
        w.state_at(3.5)
    with pytest.raises(ValueError):
        w.eval_state(3.0, 1.5)


def test_initial_history_routing():
    init = InitialHistory(lambda th: np.array([np.cos(th)]), lambda th: np.array([-np.sin(th)]))
    w = HistoryWindow.seeded(init, 1.0, 0.1)
    w.append(0.0, [1.0], [0.0])
    # between grid samples inside [-tau, 0) the user functions are used, not the interpolant
    assert w.state_at(-0.55)[0] == np.cos(-0.55)
    assert w.derivative_at(-0.55)[0] == -np.sin(-0.55)
    np.testing.assert_array_equal(w.states_at(np.array([-0.55, -0.25]))[:, 0], np.cos([-0.55, -0.25]))


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_vectorised_matches_scalar(lags):
    w = filled(np.sin, np.cos, t_end=2.0, dt=1e-2)
    v = w.view(2.0)
    np.testing.assert_allclose(v.xs(lags)[:, 0], [w.eval_state(2.0, l)[0] for l in lags], rtol=0, atol=1e-15)
    np.testing.assert_allclose(v.xdots(lags)[:, 0], [w.eval_derivative(2.0, l)[0] for l in lags],
                               rtol=0, atol=1e-15)


@given(st.floats(0.001, 2.9), st.floats(1e-9, 1e-6))
def test_state_continuous_in_query_time(s, eps):
    w = filled(np.sin, np.cos)
    assert abs(w.state_at(s + eps)[0] - w.state_at(s)[0]) <= 2 * eps


def test_grid_aligned_lookups_hit_samples():
    w = filled(np.sin, np.cos, dt=1e-3)
    for k in (17, 500, 999):
        t = 2.5
        assert w.eval_state(t, k * 1e-3)[0] == w.states[round((t - k * 1e-3) / 1e-3)][0]


def test_stage_view_interpolates_towards_current():
    w = filled(lambda t: t, lambda t: 1.0, t_end=1.0, dt=0.1)
    v = w.view(1.05, current=np.array([5.0]))
    assert v.x(0.0)[0] == 5.0
    # halfway between the last commit (t=1, x=1) and the stage state
    assert v.x(0.025)[0] == pytest.approx(3.0)
    assert v.xdot(0.02)[0] == 1.0


def test_csv_export(tmp_path):
    w = filled(np.sin, np.cos, t_end=0.01, dt=1e-3)
    path = tmp_path / "h.csv"
    w.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x_0", "xdot_0"]
    assert float(rows[5][1]) == np.sin(4e-3)
    assert len(rows) == len(w) + 1


def test_window_from_arrays_roundtrip():
    t = np.linspace(0, 1, 11)
    w = window_from_arrays(t, np.sin(t), np.cos(t), max_lag=1.0)
    np.testing.assert_array_equal(w.times, t)
    np.testing.assert_array_equal(w.states[:, 0], np.sin(t))


def test_sample_lags_endpoints():
    lags = sample_lags(1.0, 0.25, 0.01)
    assert lags[0] == 0.25 and lags[-1] == 1.0 and len(lags) == 76
