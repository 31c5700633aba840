import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsfd import _pykernels
from lsfd.optimizer import (
    OptimizerConfig,
    OptimizerError,
    OptimizerState,
    maximize_sum_se,
    maximize_sum_se_single_layer,
    mse_e,
    surrogate_objective,
    u_tilde,
    update_a,
    update_rho,
    update_u,
    update_w,
)
from lsfd.scenario import NetworkConfig, generate_scenario
from lsfd.spectral_efficiency import (
    ClosedFormCoefficients,
    closed_form_coefficients,
    optimal_lsfd_all,
    single_layer_lsfd,
    sinr_closed_form,
    sinr_closed_form_all,
)

try:
    from lsfd import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None


def random_coefficients(rng, L, K):
    b = rng.uniform(0.2, 1.0, (L, K, L)) * np.exp(1j * rng.uniform(0, 2 * np.pi, (L, K, L)))
    for l in range(L):
        b[l, :, l] *= 3.0  # serving BS dominates
    c = rng.uniform(0.0, 0.05, (L, K, L, K))
    d = rng.uniform(1e-3, 0.1, (L, K))
    return ClosedFormCoefficients(b, c, d)


def random_state(rng, L, K, rho_max=1.0):
    rho = rng.uniform(0.1, 1.0, (L, K)) * rho_max
    a = rng.standard_normal((L, K, L)) + 1j * rng.standard_normal((L, K, L))
    u = rng.standard_normal((L, K)) + 1j * rng.standard_normal((L, K))
    return OptimizerState(rho, a, u, np.ones((L, K)))


def single_user(b=2.0, c=0.1, d=0.01):
    return ClosedFormCoefficients(np.full((1, 1, 1), b, complex), np.full((1, 1, 1, 1), c),
                                  np.full((1, 1), d))


# -- MSE ------------------------------------------------------------------------------

def test_mse_zero_receiver():
    rng = np.random.default_rng(0)
    co = random_coefficients(rng, 3, 2)
    st_ = random_state(rng, 3, 2)
    st_.u[1, 0] = 0
    assert mse_e(co, st_, 1, 0) == pytest.approx(1.0)


def test_mse_at_optimal_u_is_inverse_one_plus_sinr():
    rng = np.random.default_rng(1)
    co = random_coefficients(rng, 3, 2)
    st_ = random_state(rng, 3, 2)
    for l in range(3):
        for k in range(2):
            st_.u[l, k] = update_u(co, st_, l, k)
            e = mse_e(co, st_, l, k)
            s = np.vdot(st_.a[l, k], co.b[l, k])
            ut = u_tilde(co, st_.rho, st_.a[l, k], k)
            assert e == pytest.approx(1 - st_.rho[l, k] ** 2 * abs(s) ** 2 / ut, rel=1e-12)
            sinr = sinr_closed_form(co, st_.power, st_.a[l, k], l, k)
            assert e == pytest.approx(1 / (1 + sinr), rel=1e-12)


def test_mse_noise_only():
    rng = np.random.default_rng(2)
    co = random_coefficients(rng, 3, 2)
    st_ = random_state(rng, 3, 2)
    st_.rho[:] = 0.0
    expected = 1 + abs(st_.u[2, 1]) ** 2 * np.sum(np.abs(st_.a[2, 1]) ** 2 * co.d[:, 1])
    assert mse_e(co, st_, 2, 1) == pytest.approx(expected, rel=1e-12)


# -- u --------------------------------------------------------------------------------

def test_update_u_scalar_reduction():
    b, c, d, rho = 2.0, 0.1, 0.01, 0.7
    co = single_user(b, c, d)
    st_ = OptimizerState(np.array([[rho]]), np.ones((1, 1, 1), complex),
                         np.zeros((1, 1), complex), np.ones((1, 1)))
    expected = rho * b / (rho ** 2 * b ** 2 + rho ** 2 * c + d)
    assert update_u(co, st_, 0, 0) == pytest.approx(expected, rel=1e-12)


def test_update_u_zero_lsfd():
    rng = np.random.default_rng(3)
    co = random_coefficients(rng, 2, 2)
    st_ = random_state(rng, 2, 2)
    st_.a[0, 1] = 0
    assert update_u(co, st_, 0, 1) == 0


def test_update_u_minimizes_mse():
    rng = np.random.default_rng(4)
    co = random_coefficients(rng, 3, 2)
    st_ = random_state(rng, 3, 2)
    st_.u[1, 1] = update_u(co, st_, 1, 1)
    best = mse_e(co, st_, 1, 1)
    u0 = st_.u[1, 1]
    for delta in (rng.standard_normal(100) + 1j * rng.standard_normal(100)) * 0.1:
        st_.u[1, 1] = u0 + delta
        assert mse_e(co, st_, 1, 1) >= best - 1e-12


# -- w --------------------------------------------------------------------------------

@pytest.mark.parametrize("e, w", [(1.0, 1.0), (0.5, 2.0)])
def test_update_w_values(e, w):
    assert update_w(e) == w


@pytest.mark.parametrize("e", [0.0, -1e-3, float("nan")])
def test_update_w_rejects_nonpositive(e):
    with pytest.raises(OptimizerError):
        update_w(e)


def test_w_minus_one_is_sinr_after_u_update():
    rng = np.random.default_rng(5)
    co = random_coefficients(rng, 4, 2)
    st_ = random_state(rng, 4, 2)
    for l in range(4):
        for k in range(2):
            st_.u[l, k] = update_u(co, st_, l, k)
            w = update_w(mse_e(co, st_, l, k))
            sinr = sinr_closed_form(co, st_.power, st_.a[l, k], l, k)
            assert w - 1 == pytest.approx(sinr, rel=1e-9)


# -- a --------------------------------------------------------------------------------

def test_update_a_is_minimizer():
    rng = np.random.default_rng(6)
    co = random_coefficients(rng, 3, 2)
    st_ = random_state(rng, 3, 2)
    l, k = 2, 0
    before = mse_e(co, st_, l, k)
    a_new = update_a(co, st_, l, k)
    st_.a[l, k] = a_new
    best = mse_e(co, st_, l, k)
    assert best <= before + 1e-12
    for _ in range(100):
        st_.a[l, k] = a_new + 0.1 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        assert mse_e(co, st_, l, k) >= best - 1e-12


def test_update_a_direction():
    rng = np.random.default_rng(7)
    co = random_coefficients(rng, 3, 2)
    st_ = random_state(rng, 3, 2)
    p = st_.power
    b = co.b[:, 1, :]
    C = np.einsum("m,mi,mj->ij", p[:, 1], b, np.conj(b))
    C += np.diag(np.einsum("jlq,lq->j", co.c[:, 1], p) + co.d[:, 1])
    x = np.linalg.solve(C, co.b[0, 1])
    a = update_a(co, st_, 0, 1)
    ratio = a / x
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-10)


def test_update_a_keeps_lsfd_when_u_zero():
    rng = np.random.default_rng(8)
    co = random_coefficients(rng, 2, 1)
    st_ = random_state(rng, 2, 1)
    st_.u[1, 0] = 0
    np.testing.assert_array_equal(update_a(co, st_, 1, 0), st_.a[1, 0])


def test_update_a_single_cell_fixed_point_sinr():
    co = single_user()
    st_ = OptimizerState(np.ones((1, 1)), np.ones((1, 1, 1), complex),
                         np.zeros((1, 1), complex), np.ones((1, 1)))
    st_.u[0, 0] = update_u(co, st_, 0, 0)
    a = update_a(co, st_, 0, 0)
    assert a[0].real > 0 and abs(a[0].imag) < 1e-15
    assert sinr_closed_form(co, st_.power, a, 0, 0) == pytest.approx(
        sinr_closed_form(co, st_.power, np.ones(1), 0, 0), rel=1e-12)


# -- rho ------------------------------------------------------------------------------

def _single_user_state(co, rho):
    st_ = OptimizerState(np.array([[rho]]), np.ones((1, 1, 1), complex),
                         np.zeros((1, 1), complex), np.ones((1, 1)))
    st_.u[0, 0] = update_u(co, st_, 0, 0)
    st_.w[0, 0] = update_w(mse_e(co, st_, 0, 0))
    return st_


@given(rho=st.floats(0.05, 1.0), d=st.floats(1e-6, 1.0))
def test_update_rho_single_user_step(rho, d):
    # one user, a = 1: the block step is rho + d / (rho (b^2 + c)), capped
    b, c = 2.0, 0.1
    co = single_user(b, c, d)
    new = update_rho(co, _single_user_state(co, rho), 0, 0, 10.0)
    assert new == pytest.approx(min(rho + d / (rho * (b * b + c)), 10.0), rel=1e-10)


def test_update_rho_single_user_hits_cap():
    co = single_user(d=10.0)
    assert update_rho(co, _single_user_state(co, 0.5), 0, 0, 1.0) == 1.0


def test_update_rho_clamps_at_zero():
    rng = np.random.default_rng(9)
    co = random_coefficients(rng, 2, 1)
    st_ = random_state(rng, 2, 1)
    own = np.vdot(st_.a[0, 0], co.b[0, 0])
    st_.u[0, 0] = -np.conj(own)  # Re(u s) < 0
    assert update_rho(co, st_, 0, 0, 1.0) == 0.0


def test_update_rho_zero_denominator():
    co = ClosedFormCoefficients(np.ones((1, 1, 1), complex), np.zeros((1, 1, 1, 1)),
                                np.ones((1, 1)))
    st_ = OptimizerState(np.array([[0.5]]), np.ones((1, 1, 1), complex),
                         np.ones((1, 1), complex), np.ones((1, 1)))
    st_.u[0, 0] = 1.0
    st_.w[:] = 0.0  # D = 0 and N = 0 -> clamp wins
    assert update_rho(co, st_, 0, 0, 2.0) == 0.0
    st_.w[:] = 1.0
    st_.u[0, 0] = 1e-300
    # N > 0, D underflows to 0
    assert update_rho(co, st_, 0, 0, 2.0) == 2.0


def _block_sweep(co, st_, rho_max):
    """Reference Jacobi-within-block sweep; returns the surrogate after each block."""
    L, K = st_.rho.shape
    idx = [(l, k) for l in range(L) for k in range(K)]
    out = []
    for l, k in idx:
        st_.u[l, k] = update_u(co, st_, l, k)
    out.append(surrogate_objective(co, st_))
    for l, k in idx:
        st_.w[l, k] = update_w(mse_e(co, st_, l, k))
    out.append(surrogate_objective(co, st_))
    new_a = {lk: update_a(co, st_, *lk) for lk in idx}
    for lk, a in new_a.items():
        st_.a[lk] = a
    out.append(surrogate_objective(co, st_))
    new_rho = {lk: update_rho(co, st_, *lk, rho_max) for lk in idx}
    for lk, r in new_rho.items():
        st_.rho[lk] = r
    out.append(surrogate_objective(co, st_))
    return out


@given(seed=st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_surrogate_non_increasing_per_block(seed):
    rng = np.random.default_rng(seed)
    co = random_coefficients(rng, 4, 2)
    st_ = random_state(rng, 4, 2)
    st_.u[:] = [[update_u(co, st_, l, k) for k in range(2)] for l in range(4)]
    st_.w[:] = [[update_w(mse_e(co, st_, l, k)) for k in range(2)] for l in range(4)]
    prev = surrogate_objective(co, st_)
    for _ in range(5):
        for value in _block_sweep(co, st_, 1.0):
            assert value <= prev + 1e-9 * abs(prev)
            prev = value
        assert np.all(st_.rho ** 2 <= 1.0 + 1e-12)


@pytest.mark.parametrize("update_lsfd", [True, False])
def test_reference_sweep_matches_kernels(update_lsfd):
    rng = np.random.default_rng(10)
    co = random_coefficients(rng, 3, 2)
    st_ = random_state(rng, 3, 2)
    ref = OptimizerState(st_.rho.copy(), st_.a.copy(), st_.u.copy(), st_.w.copy())
    L, K = 3, 2
    idx = [(l, k) for l in range(L) for k in range(K)]
    for lk in idx:
        ref.u[lk] = update_u(co, ref, *lk)
    for lk in idx:
        ref.w[lk] = update_w(mse_e(co, ref, *lk))
    if update_lsfd:
        new_a = {lk: update_a(co, ref, *lk) for lk in idx}
        for lk, a in new_a.items():
            ref.a[lk] = a
    new_rho = {lk: update_rho(co, ref, *lk, 1.0) for lk in idx}
    for lk, r in new_rho.items():
        ref.rho[lk] = r

    backends = [_pykernels] + ([_ckernels] if _ckernels is not None else [])
    for kern in backends:
        rho, a = st_.rho.copy(), st_.a.copy()
        u, w = kern.wmmse_sweep(co.b.astype(complex), co.c, co.d, rho, a,
                                np.ones((L, K)), update_lsfd)
        np.testing.assert_allclose(np.asarray(u), ref.u, rtol=1e-10)
        np.testing.assert_allclose(np.asarray(w), ref.w, rtol=1e-10)
        np.testing.assert_allclose(a, ref.a, rtol=1e-10)
        np.testing.assert_allclose(rho, ref.rho, rtol=1e-10, atol=1e-15)


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_compiled_kernels_match_numpy():
    rng = np.random.default_rng(11)
    co = random_coefficients(rng, 4, 5)
    p = rng.uniform(0, 1, (4, 5))
    a = rng.standard_normal((4, 5, 4)) + 1j * rng.standard_normal((4, 5, 4))
    np.testing.assert_allclose(_ckernels.sinr_all(co.b, co.c, co.d, p, a),
                               _pykernels.sinr_all(co.b, co.c, co.d, p, a), rtol=1e-12)
    rho = np.sqrt(p)
    a1, a2, r1, r2 = a.copy(), a.copy(), rho.copy(), rho.copy()
    for _ in range(20):
        _pykernels.wmmse_sweep(co.b, co.c, co.d, r1, a1, np.ones((4, 5)), True)
        _ckernels.wmmse_sweep(co.b, co.c, co.d, r2, a2, np.ones((4, 5)), True)
    np.testing.assert_allclose(r2, r1, rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(a2, a1, rtol=1e-9, atol=1e-14)


# -- drivers ----------------------------------------------------------------------------

def test_config_validation():
    for bad in ({"eps": 0.0}, {"max_iters": 0}, {"init": "zeros"}):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


def test_random_init_needs_rng():
    with pytest.raises(ValueError):
        maximize_sum_se(single_user(), 1.0)


def test_single_user_converges_to_full_power():
    res = maximize_sum_se(single_user(d=10.0), 4.0, rng=np.random.default_rng(0))
    assert res.converged and res.state.iteration <= 3
    assert res.report.power_mw[0, 0] == pytest.approx(4.0)


@pytest.mark.parametrize("init", ["random", "random-sqrt", "full"])
def test_power_constraint_and_monotone_history(init):
    sc = generate_scenario(NetworkConfig(L=4, K=3, M=32, varsigma=0.5), 0)
    co = closed_form_coefficients(sc)
    res = maximize_sum_se(co, sc.p_max, OptimizerConfig(init=init),
                          rng=np.random.default_rng(1))
    assert np.all(res.report.power_mw <= sc.p_max + 1e-12)
    assert np.all(res.report.power_mw >= 0)
    assert np.all(np.diff(res.history) >= -1e-9)
    # switched-off users: 1/e - 1 cancels below a few ulps of w
    floor = 8 * np.finfo(float).eps * res.state.w
    assert np.all(np.abs(res.state.w - 1 - res.report.sinr) <= 1e-9 * res.report.sinr + floor)


def test_random_init_policies_differ_in_distribution():
    co = random_coefficients(np.random.default_rng(2), 4, 5)
    draws = {}
    for init in ("random", "random-sqrt"):
        res = maximize_sum_se(co, 1.0, OptimizerConfig(init=init, max_iters=1),
                              rng=np.random.default_rng(3))
        draws[init] = res.history[0]
    assert draws["random"] != draws["random-sqrt"]


def test_full_power_start_never_below_baseline():
    for drop in range(3):
        sc = generate_scenario(NetworkConfig(L=4, K=3, M=32, varsigma=0.8), drop)
        co = closed_form_coefficients(sc)
        p = sc.p_max
        base = sinr_closed_form_all(co, p, optimal_lsfd_all(co, p))
        base_se = np.log2(1 + base).sum() / 4
        res = maximize_sum_se(co, p, rho0=np.sqrt(p))
        assert res.history[0] == pytest.approx(base_se, rel=1e-12)
        assert res.history[-1] >= base_se - 1e-9


def test_single_layer_keeps_selector_and_is_dominated():
    sc = generate_scenario(NetworkConfig(L=4, K=3, M=32, varsigma=0.5), 1)
    co = closed_form_coefficients(sc)
    single = maximize_sum_se_single_layer(co, sc.p_max, rng=np.random.default_rng(4))
    np.testing.assert_array_equal(single.report.lsfd, single_layer_lsfd(4, 3))
    assert np.all(np.diff(single.history) >= -1e-9)
    two = maximize_sum_se(co, sc.p_max, rho0=np.sqrt(single.report.power_mw))
    assert two.history[-1] >= single.history[-1] - 1e-9


def test_single_cell_single_layer_equals_two_layer():
    sc = generate_scenario(NetworkConfig(L=1, K=3, M=16), 0)
    co = closed_form_coefficients(sc)
    rho0 = np.sqrt(sc.p_max) * 0.5
    one = maximize_sum_se_single_layer(co, sc.p_max, rho0=rho0)
    two = maximize_sum_se(co, sc.p_max, rho0=rho0)
    np.testing.assert_allclose(one.history[-1], two.history[-1], rtol=1e-9)
    np.testing.assert_allclose(one.report.power_mw, two.report.power_mw, rtol=1e-6, atol=1e-9)


def test_prelog_scales_history():
    co = random_coefficients(np.random.default_rng(5), 2, 2)
    a = maximize_sum_se(co, 1.0, rho0=np.ones((2, 2)))
    b = maximize_sum_se(co, 1.0, rho0=np.ones((2, 2)), prelog=0.5)
    np.testing.assert_allclose(b.history, 0.5 * a.history, rtol=1e-12)
