import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbfal import scenarios as S
from cbfal.errors import GradientMismatch, NotExtendable
from cbfal.functionals import (DEGREE_ONE, DEGREE_TWO_CANDIDATE, INVALID_NO_DEGREE, ClassKeFn, DelayStructure,
                               DoubleDensityTerm, GeneralFunctionalSpec, build_from_general, check_gradients,
                               classify_relative_degree, derivative_along, eval_split_derivative, eval_value,
                               extend, fd_consistency, ibp_residual)
from cbfal.history import AnalyticView, InitialHistory, initial_view, window_from_arrays
from cbfal.verification import double_integral_general, smooth_view

const04 = initial_view(InitialHistory.constant([0.4]))


def two_point_view(x_now, x_lag, xd_lag, tau=1.0):
    """History with prescribed ``x(t)``, ``x(t - tau)`` and ``xdot(t - tau)`` (linear in between)."""
    def xf(s):
        s = np.asarray(s, dtype=float)
        return (x_lag + (x_now - x_lag) * (s + tau) / tau)[..., None] if s.ndim else \
            np.array([x_lag + (x_now - x_lag) * (s + tau) / tau])

    def df(s):
        s = np.asarray(s, dtype=float)
        return np.full(s.shape + (1,), xd_lag) if s.ndim else np.array([xd_lag])

    return AnalyticView(xf, df, 0.0)


def test_values_on_constant_history():
    assert eval_value(S.case1_spec(), const04) == pytest.approx(0.84, abs=1e-15)
    assert eval_value(S.case3_spec(1.0), const04) == pytest.approx(0.84, abs=1e-13)
    assert eval_value(S.case2_spec(1.0), two_point_view(0.4, 0.2, 0.008)) == pytest.approx(0.9, abs=1e-15)


def test_split_derivative_examples():
    plant = S.scalar_plant(1.0)
    lf, lg = eval_split_derivative(S.case1_spec(), plant, const04)
    assert lf == pytest.approx(-2 * 0.4 ** 4, abs=1e-15) and lg[0] == pytest.approx(-0.32, abs=1e-15)
    lf, lg = eval_split_derivative(S.case3_spec(1.0), plant, const04)
    assert lf == pytest.approx(0.0, abs=1e-13) and lg[0] == 0.0
    lf, lg = eval_split_derivative(S.case2_spec(1.0), plant, two_point_view(0.4, 0.2, 0.2 ** 3))
    assert lf == pytest.approx(-0.0272, abs=1e-15) and lg[0] == pytest.approx(-0.08, abs=1e-15)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_general_case1_matches_hand_spec(a, b):
    g = build_from_general(S.case1_general())
    xt = two_point_view(a, b, 0.0)
    plant = S.scalar_plant(1.0)
    hand = eval_split_derivative(S.case1_spec(), plant, xt)
    built = eval_split_derivative(g, plant, xt)
    assert built[0] == pytest.approx(hand[0], abs=1e-10)
    assert built[1][0] == pytest.approx(hand[1][0], abs=1e-10)
    assert eval_value(g, xt) == pytest.approx(eval_value(S.case1_spec(), xt), abs=1e-12)


def test_general_case2_matches_hand_spec():
    g = build_from_general(S.case2_general(1.0))
    plant = S.scalar_plant(1.0)
    for seed in range(5):
        xt = smooth_view(1, seed).at(2.0)
        a, b = (eval_split_derivative(s, plant, xt) for s in (g, S.case2_spec(1.0)))
        assert a[0] == pytest.approx(b[0], abs=1e-12)


def test_zero_double_kernel_reduces_to_single_integral():
    full = double_integral_general()
    zero = double_integral_general()
    zero.omega = lambda th, ch: np.zeros(np.broadcast(th, ch).shape + (2, 2))
    zero.omega_dtheta = zero.omega_dchi = zero.omega
    single = build_from_general(double_integral_general(with_double=False))
    reduced = build_from_general(zero)
    xt = smooth_view(2, 3, grid_step=1e-2).at(1.7)
    assert eval_value(reduced, xt) == eval_value(single, xt)
    assert derivative_along(reduced, xt) == pytest.approx(derivative_along(single, xt), rel=1e-15, abs=0)
    assert eval_value(build_from_general(full), xt) != eval_value(single, xt)


def test_double_integral_fd_on_stored_trajectory():
    spec = build_from_general(double_integral_general())
    view = smooth_view(2, 7)
    dt = 1e-3
    times = np.arange(0.0, 3.0 + dt / 2, dt)
    window = window_from_arrays(times, view.xs(-times), view.xdots(-times), max_lag=1.0)
    for t, assembled, fd in fd_consistency(spec, window.view, [1.5, 2.25, 2.999], h=1e-5):
        assert abs(assembled - fd) <= 1e-4 * max(1.0, abs(fd))


def test_double_integral_by_parts_uses_both_partials():
    # a kernel that is not symmetric in its two arguments exposes a wrong partial derivative
    n = 1
    omega = lambda th, ch: np.exp(2 * th + ch)[..., None, None]
    d_th = lambda th, ch: 2 * np.exp(2 * th + ch)[..., None, None]
    d_ch = lambda th, ch: np.exp(2 * th + ch)[..., None, None]
    mu = lambda X: X ** 2
    jmu = lambda X: 2 * X[:, :, None]
    nu = lambda X: np.sin(X)
    jnu = lambda X: np.cos(X)[:, :, None]
    xt = smooth_view(1, 11, grid_step=2e-3).at(2.0)
    good = DoubleDensityTerm(1.0, n, lambda v: np.ones(1), omega, mu, jmu, nu, jnu, d_th, d_ch)
    assert abs(ibp_residual(good, xt)) < 1e-9
    wrong = DoubleDensityTerm(1.0, n, lambda v: np.ones(1), omega, mu, jmu, nu, jnu, d_th, d_th)
    assert abs(ibp_residual(wrong, xt)) > 1e-3


@pytest.mark.parametrize("name", ["case1", "case2", "case3", "case3.lie_f", "case4", "predator_prey",
                                  "predator_prey.lie_f", "double_integral"])
@given(seed=st.integers(0, 10_000), t=st.floats(0.5, 5.0))
def test_fd_consistency_property(name, seed, t, registered):
    spec = registered[name]
    n = 2 if name.startswith(("predator", "double")) else 1
    view = smooth_view(n, seed, grid_step=5e-3)
    ((_, assembled, fd),) = fd_consistency(spec, view.at, [t], h=1e-5)
    assert abs(assembled - fd) <= 1e-3 * max(abs(fd), 1e-3)


@pytest.fixture(scope="module")
def registered():
    from cbfal.verification import registered_specs
    return registered_specs()


def test_corrupted_weight_is_detected():
    spec = S.case1_spec().with_w0_scaled(2.0)
    view = smooth_view(1, 0)
    ((_, assembled, fd),) = fd_consistency(spec, view.at, [1.0])
    assert abs(assembled - 2 * fd) <= 1e-6 * abs(fd)


def test_gradient_mismatch_raised():
    bad = GeneralFunctionalSpec(h=lambda v: 1.0 - float(v @ v), grads=[lambda v: -v])
    with pytest.raises(GradientMismatch):
        check_gradients(bad)
    with pytest.raises(GradientMismatch):
        build_from_general(GeneralFunctionalSpec(h=lambda v: 1.0, grads=[None, None]))


def test_extend_examples():
    alpha = ClassKeFn.linear(3.0)
    ext = extend(S.case3_spec(1.0), alpha, plant=S.scalar_plant(1.0))
    assert ext.value(const04) == pytest.approx(2.52, abs=1e-12)

    pp = S.PredatorPreyParams()
    eq = pp.equilibrium
    np.testing.assert_allclose(eq, np.array([4.1, 3.8]) / 19.3, rtol=1e-15)
    ext = extend(S.predator_prey_spec(pp), ClassKeFn.linear(1.0), plant=S.predator_prey_plant(pp))
    He = ext.value(initial_view(InitialHistory.constant(eq)))
    assert He == pytest.approx(-(eq[0] - 0.05) * (eq[0] - 0.6), abs=1e-15)
    assert He == pytest.approx(0.06295, abs=5e-6)

    with pytest.raises(NotExtendable) as info:
        extend(S.case2_spec(1.0), ClassKeFn.linear(1.0), plant=S.scalar_plant(1.0))
    assert info.value.offending_lags == [1.0]
    with pytest.raises(NotExtendable):
        extend(S.case1_spec(), ClassKeFn.linear(1.0), plant=S.scalar_plant(1.0))


def test_classification():
    plant = S.scalar_plant(1.0)
    assert classify_relative_degree(S.case1_spec(), plant) == DEGREE_ONE
    assert classify_relative_degree(S.case2_spec(1.0), plant) == DEGREE_ONE
    assert classify_relative_degree(S.case3_spec(1.0), plant) == DEGREE_TWO_CANDIDATE
    assert classify_relative_degree(S.case4_spec(1.0), plant) == INVALID_NO_DEGREE
    assert classify_relative_degree(S.case4_spec(1.0, point_coeff=0.0), plant) == DEGREE_TWO_CANDIDATE
    assert classify_relative_degree(S.case4_spec(1.0, distributed=False), plant) == INVALID_NO_DEGREE
    pp = S.PredatorPreyParams()
    assert classify_relative_degree(S.predator_prey_spec(pp), S.predator_prey_plant(pp)) == DEGREE_TWO_CANDIDATE


@given(st.floats(1e-3, 100.0))
def test_linear_class_k(gamma):
    a = ClassKeFn.linear(gamma)
    assert a(0.0) == 0.0 and a.check() == []
    assert a.derivative(0.3) == gamma


def test_class_k_violations_reported():
    assert ClassKeFn(lambda r: r * r, lambda r: 2 * r).check()
    assert ClassKeFn(lambda r: r + 1, lambda r: 1.0).check()
    with pytest.raises(ValueError):
        ClassKeFn.linear(0.0)


def test_delay_structure():
    spec = S.case4_spec(1.0)
    d = spec.delays
    assert d.point_lags == (1.0,) and d.max_lag == 1.0 and d.distributed_interval == (1.0, 0.0)
    with pytest.raises(ValueError):
        DelayStructure((2.0,), None, 1.0)
