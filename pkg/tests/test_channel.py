import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsfd import channel as ch
from lsfd.scenario import NetworkConfig, generate_scenario

from conftest import make_scenario, random_correlation, scaled_identity


def _sample_cov(x):
    return x.T @ np.conj(x) / x.shape[0]


def test_zero_covariance_gives_zero_channel():
    sc = make_scenario(np.zeros((1, 1, 1, 4, 4)))
    h = ch.sample_channels(sc, np.random.default_rng(0), 10).h
    assert np.all(h == 0)


def test_identity_covariance_empirical():
    sc = make_scenario(scaled_identity(1, 1, 4, 1.0))
    h = ch.sample_channels(sc, np.random.default_rng(1), 100_000).h[:, 0, 0, 0, :]
    err = np.linalg.norm(_sample_cov(h) - np.eye(4)) / np.linalg.norm(np.eye(4))
    assert err < 0.05


def test_sampling_deterministic_per_stream():
    sc = generate_scenario(NetworkConfig(L=2, K=2, M=4), 0)
    a = ch.sample_channels(sc, ch.block_rng(0, 0, 1, 0), 3).h
    b = ch.sample_channels(sc, ch.block_rng(0, 0, 1, 0), 3).h
    c = ch.sample_channels(sc, ch.block_rng(0, 0, 1, 1), 3).h
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_hermitian_sqrt_factorizes():
    rng = np.random.default_rng(2)
    R = random_correlation(rng, 1, 1, 1, 6)[0, 0, 0]
    F = ch.hermitian_sqrt(R)
    np.testing.assert_allclose(F @ F.conj().T, R, atol=1e-12)


def test_hermitian_sqrt_rank_deficient():
    v = np.array([1.0, 1j, 0.0])
    R = np.outer(v, v.conj())
    F = ch.hermitian_sqrt(R)
    np.testing.assert_allclose(F @ F.conj().T, R, atol=1e-12)


def test_hermitian_sqrt_rejects_indefinite():
    with pytest.raises(ch.FactorizationError):
        ch.hermitian_sqrt(np.diag([1.0, -1.0]))


# -- pilot phase ------------------------------------------------------------

def test_pilot_single_user_noise_free():
    K = 3
    R = scaled_identity(1, K, 4, 1.0)
    sc = make_scenario(R, pilot_power=2.0)
    real = ch.sample_channels(sc, np.random.default_rng(3))
    Y = ch.pilot_received(sc, real, None, noise=False)[0]  # (M, K)
    phi0 = np.sqrt(K) * np.eye(K)[0]
    np.testing.assert_allclose(Y @ phi0, K * np.sqrt(2.0) * real.h[0, 0, 0], atol=1e-12)


def test_pilot_zero_power_is_noise():
    sc = make_scenario(scaled_identity(2, 2, 3, 1.0), pilot_power=0.0, sigma2=0.5)
    real = ch.sample_channels(sc, np.random.default_rng(4))
    Y = ch.pilot_received(sc, real, np.random.default_rng(5))
    noise = ch.complex_normal(np.random.default_rng(5), Y.shape, 0.5)
    np.testing.assert_allclose(Y, noise)


def test_pilot_contamination_sums_sharing_users():
    sc = make_scenario(scaled_identity(2, 2, 3, 1.0), pilot_power=1.0)
    real = ch.sample_channels(sc, np.random.default_rng(6))
    proj = ch.project_pilots(ch.pilot_received(sc, real, None, noise=False))
    # at BS 0, pilot 1 sees user 1 of both cells
    expected = 2 * (real.h[0, 1, 0] + real.h[1, 1, 0])
    np.testing.assert_allclose(proj[0, 1], expected, atol=1e-12)


# -- Psi ----------------------------------------------------------------------

def test_psi_diagonal_case():
    L, K, M = 3, 2, 4
    sc = make_scenario(scaled_identity(L, K, M, 0.7), pilot_power=2.0, sigma2=0.3)
    np.testing.assert_allclose(ch.compute_psi(sc, 1, 2), (K * L * 2.0 * 0.7 + 0.3) * np.eye(M))


def test_psi_single_cell():
    sc = make_scenario(scaled_identity(1, 3, 2, 0.5), pilot_power=4.0, sigma2=0.1)
    np.testing.assert_allclose(ch.compute_psi(sc, 0, 0), (3 * 4.0 * 0.5 + 0.1) * np.eye(2))


def test_psi_matches_pilot_covariance():
    rng = np.random.default_rng(7)
    R = random_correlation(rng, 2, 2, 2, 4)
    sc = make_scenario(R, pilot_power=[[1.0, 2.0], [0.5, 1.5]], sigma2=0.2)
    real = ch.sample_channels(sc, ch.block_rng(0, 0, 9, 0), 100_000)
    Y = ch.pilot_received(sc, real, ch.block_rng(0, 0, 9, 1))
    for j in range(2):
        for k in range(2):
            x = ch.project_pilots(Y)[:, j, k, :] / np.sqrt(2)
            psi = ch.compute_psi(sc, k, j)
            assert np.linalg.norm(_sample_cov(x) - psi) / np.linalg.norm(psi) < 0.05


def test_psi_all_consistent():
    sc = generate_scenario(NetworkConfig(L=2, K=2, M=4), 0)
    psi = ch.compute_psi_all(sc)
    for j in range(2):
        for k in range(2):
            np.testing.assert_allclose(psi[j, k], ch.compute_psi(sc, k, j))


# -- MMSE estimation -------------------------------------------------------------

def test_mmse_perfect_estimation_limit():
    sc = make_scenario(scaled_identity(1, 1, 4, 1.0), pilot_power=1.0, sigma2=1e-14)
    real = ch.sample_channels(sc, np.random.default_rng(8))
    Y = ch.pilot_received(sc, real, np.random.default_rng(9))
    est = ch.mmse_estimate(Y[0], sc, 0)
    np.testing.assert_allclose(est[0], real.h[0, 0, 0], atol=1e-6)


def test_mmse_large_noise_limit():
    sc = make_scenario(scaled_identity(1, 1, 4, 1.0), pilot_power=1.0, sigma2=1e12)
    real = ch.sample_channels(sc, np.random.default_rng(10))
    Y = ch.pilot_received(sc, real, np.random.default_rng(11))
    est = ch.mmse_estimate(Y[0], sc, 0)
    assert np.linalg.norm(est) < 1e-4


def test_mmse_batched_matches_single():
    sc = generate_scenario(NetworkConfig(L=2, K=3, M=4), 1)
    real = ch.sample_channels(sc, np.random.default_rng(12))
    Y = ch.pilot_received(sc, real, np.random.default_rng(13))
    own = ch.estimate_own(sc, Y)
    for j in range(2):
        np.testing.assert_allclose(own[j], ch.mmse_estimate(Y[j], sc, j), rtol=1e-12)


def test_contaminating_estimates_share_projection():
    rng = np.random.default_rng(14)
    sc = make_scenario(random_correlation(rng, 2, 1, 2, 3), sigma2=0.1)
    real = ch.sample_channels(sc, rng)
    Y = ch.pilot_received(sc, real, rng)
    both = ch.mmse_estimate(Y[0], sc, 0, targets=[(0, 0), (1, 0)])
    proj = ch.project_pilots(Y)[0, 0]
    psi_inv = np.linalg.inv(ch.compute_psi(sc, 0, 0))
    for i, l in enumerate((0, 1)):
        np.testing.assert_allclose(both[i], sc.R[l, 0, 0] @ psi_inv @ proj, rtol=1e-10)


def test_estimate_covariance_and_orthogonality():
    rng = np.random.default_rng(15)
    R = random_correlation(rng, 2, 2, 2, 4)
    sc = make_scenario(R, pilot_power=1.0, sigma2=0.3)
    real = ch.sample_channels(sc, ch.block_rng(1, 0, 2, 0), 100_000)
    Y = ch.pilot_received(sc, real, ch.block_rng(1, 0, 2, 1))
    h_hat = ch.estimate_own(sc, Y)[:, 1, 0, :]
    phi = ch.estimate_covariance(sc)[1, 0, 1]
    assert np.linalg.norm(_sample_cov(h_hat) - phi) / np.linalg.norm(phi) < 0.05
    err = real.h[:, 1, 0, 1, :] - h_hat
    cross = h_hat.T @ np.conj(err) / h_hat.shape[0]
    assert np.linalg.norm(cross) / np.linalg.norm(phi) < 0.05


@given(seed=st.integers(0, 10_000), vs=st.floats(0.0, 0.99))
@settings(max_examples=10, deadline=None)
def test_phi_and_error_covariance_psd(seed, vs):
    sc = generate_scenario(NetworkConfig(L=2, K=2, M=6, varsigma=vs, seed=seed), 0)
    phi = ch.estimate_covariance(sc)
    scale = sc.beta[..., None]
    assert np.all(np.linalg.eigvalsh(phi) >= -1e-8 * scale)
    assert np.all(np.linalg.eigvalsh(sc.R - phi) >= -1e-8 * scale)
    psi = ch.compute_psi_all(sc)
    assert np.all(np.linalg.eigvalsh(psi) > 0)


def test_estimate_set_bundle():
    sc = generate_scenario(NetworkConfig(L=2, K=2, M=4), 0)
    real = ch.sample_channels(sc, np.random.default_rng(0), 2)
    Y = ch.pilot_received(sc, real, np.random.default_rng(1))
    est = ch.estimate_set(sc, Y)
    assert est.h_hat.shape == (2, 2, 2, 4)
    assert est.psi.shape == (2, 2, 4, 4)
    assert est.phi.shape == (2, 2, 2, 4, 4)
