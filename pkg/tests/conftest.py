import numpy as np
import pytest

from lsfd.scenario import NetworkConfig, Scenario


def make_scenario(R, pilot_power=1.0, sigma2=1.0, p_max=1.0, seed=0, drop_index=0):
    """Scenario around hand-built correlation matrices ``R`` (L, K, L, M, M)."""
    R = np.asarray(R, dtype=complex)
    L, K, _, M, _ = R.shape
    config = NetworkConfig(L=L, K=K, M=M, seed=seed)
    beta = np.real(np.trace(R, axis1=-2, axis2=-1)) / M
    zeros = np.zeros((L, K, L))
    return Scenario(
        config=config,
        drop_index=drop_index,
        bs_pos=np.zeros((L, 2)),
        user_pos=np.zeros((L, K, 2)),
        distance=zeros + 100.0,
        theta=zeros,
        beta=beta,
        R=R,
        sigma2=float(sigma2),
        pilot_power=np.broadcast_to(np.asarray(pilot_power, float), (L, K)).copy(),
        p_max=np.broadcast_to(np.asarray(p_max, float), (L, K)).copy(),
    )


def scaled_identity(L, K, M, beta):
    """R[l, k, j] = beta[l, k, j] I."""
    beta = np.broadcast_to(np.asarray(beta, float), (L, K, L))
    return beta[..., None, None] * np.eye(M)


def random_correlation(rng, L, K, M, scale=1.0):
    """Generic Hermitian PSD correlation matrices with distinct eigenvectors per link."""
    X = rng.standard_normal((L, K, L, M, M)) + 1j * rng.standard_normal((L, K, L, M, M))
    R = X @ np.conj(np.swapaxes(X, -1, -2)) / M
    gains = scale * rng.uniform(0.1, 1.0, (L, K, L))
    return gains[..., None, None] * R


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: ``acceptance(name, ok, detail)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(name, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
        return ok

    return record


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
