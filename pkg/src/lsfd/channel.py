"""Correlated Rayleigh fading, the pilot phase and MMSE channel estimation.

Pilots: user k of every cell sends ``sqrt(K) * e_k`` so that
``||phi_k||^2 = K`` and users sharing an index contaminate each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario

__all__ = [
    "FactorizationError",
    "ChannelRealization",
    "EstimateSet",
    "hermitian_sqrt",
    "channel_factors",
    "sample_channels",
    "pilot_received",
    "project_pilots",
    "compute_psi",
    "compute_psi_all",
    "estimation_matrices",
    "mmse_estimate",
    "estimate_own",
    "estimate_covariance",
    "estimate_set",
    "block_rng",
    "complex_normal",
]


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass
class ChannelRealization:
    """``h[..., l, k, j, :]`` is the channel from user (l, k) to BS j."""

    h: np.ndarray


@dataclass
class EstimateSet:
    """Own-cell MMSE estimates and the statistics behind them.

    Attributes
    ----------
    h_hat : ndarray, shape (L, K, M)
        BS l's estimate of its own user k.
    psi : ndarray, shape (L, K, M, M)
        ``psi[j, k]`` is the covariance (over K) of BS j's projected pilot k.
    phi : ndarray, shape (L, K, L, M, M)
        Estimate covariance of every channel h[l, k, j] as estimated by BS j.
    """

    h_hat: np.ndarray
    psi: np.ndarray
    phi: np.ndarray


def complex_normal(rng: np.random.Generator, shape, scale=1.0) -> np.ndarray:
    """CN(0, scale) samples."""
    std = np.sqrt(scale / 2.0)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def block_rng(seed: int, drop_index: int, stream: int, chunk: int) -> np.random.Generator:
    """Generator for one chunk of coherence blocks, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed, drop_index, 1, stream, chunk]))


def hermitian_sqrt(R: np.ndarray) -> np.ndarray:
    """Hermitian square root ``F`` with ``F @ F^H = R``, batched over leading axes.

    Slightly indefinite inputs are regularized once with ``1e-12 trace/M``
    on the diagonal; anything still indefinite raises `FactorizationError`.
    """
    R = np.asarray(R, dtype=complex)
    M = R.shape[-1]
    R = 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))
    eigval, eigvec = np.linalg.eigh(R)
    scale = np.maximum(np.real(np.trace(R, axis1=-2, axis2=-1)) / M, 0.0)
    tol = 1e-8 * scale[..., None]
    bad = np.any(eigval < -tol, axis=-1)
    if np.any(bad):
        eye = np.eye(M)
        R = R + (1e-12 * scale)[..., None, None] * eye
        eigval, eigvec = np.linalg.eigh(R)
        if np.any(eigval < -tol):
            raise FactorizationError("correlation matrix is indefinite")
    eigval = np.clip(eigval, 0.0, None)
    return (eigvec * np.sqrt(eigval)[..., None, :]) @ np.conj(np.swapaxes(eigvec, -1, -2))


def channel_factors(scenario: Scenario) -> np.ndarray:
    """Per-link factors of R, computed once per scenario and cached on it."""
    cached = getattr(scenario, "_factors", None)
    if cached is None:
        cached = hermitian_sqrt(scenario.R)
        scenario._factors = cached
    return cached


def sample_channels(scenario: Scenario, rng: np.random.Generator,
                    n_blocks: int | None = None) -> ChannelRealization:
    """Draw ``h ~ CN(0, R)`` for every link.

    With ``n_blocks`` set, a leading axis of independent coherence blocks is added.
    """
    F = channel_factors(scenario)
    L, K, M = scenario.L, scenario.K, scenario.M
    B = 1 if n_blocks is None else n_blocks
    g = complex_normal(rng, (L, K, L, M, B))
    h = F @ g  # (L, K, L, M, B)
    h = np.moveaxis(h, -1, 0)
    return ChannelRealization(h[0] if n_blocks is None else h)


def pilot_received(scenario: Scenario, realization: ChannelRealization,
                   rng: np.random.Generator, noise: bool = True) -> np.ndarray:
    """Received pilot matrices ``Y[..., j]`` of shape (M, K) at every BS j.

    ``Y_j = sum_{l,k} sqrt(p_hat[l,k]) h[l,k,j] phi_k^H + N_j`` with
    ``phi_k = sqrt(K) e_k``.  Returns an array of shape (..., L, M, K).
    """
    h = realization.h  # (..., L, K, L, M)
    K = scenario.K
    amp = np.sqrt(scenario.pilot_power)[:, :, None, None]
    # column k of Y_j: sqrt(K) * sum_l sqrt(p_hat) h[l, k, j]
    cols = np.sqrt(K) * np.sum(amp * h, axis=-4)  # (..., K, L, M)
    Y = np.swapaxes(np.swapaxes(cols, -3, -2), -1, -2)  # (..., L, M, K)
    if noise:
        Y = Y + complex_normal(rng, Y.shape, scenario.sigma2)
    return Y


def project_pilots(Y: np.ndarray) -> np.ndarray:
    """``Y_j phi_k`` for every BS and pilot, returned as shape (..., L, K, M)."""
    K = Y.shape[-1]
    return np.sqrt(K) * np.swapaxes(Y, -1, -2)


def compute_psi(scenario: Scenario, k: int, j: int) -> np.ndarray:
    """``Psi = K sum_l p_hat[l,k] R[l,k,j] + sigma2 I`` (sum over the L pilot-sharing cells)."""
    K, M = scenario.K, scenario.M
    weighted = np.tensordot(scenario.pilot_power[:, k], scenario.R[:, k, j], axes=(0, 0))
    return K * weighted + scenario.sigma2 * np.eye(M)


def compute_psi_all(scenario: Scenario) -> np.ndarray:
    """All Psi matrices, shape (L, K, M, M) indexed ``[j, k]``."""
    cached = getattr(scenario, "_psi", None)
    if cached is None:
        K, M = scenario.K, scenario.M
        weighted = np.einsum("lk,lkjmn->jkmn", scenario.pilot_power, scenario.R)
        cached = K * weighted + scenario.sigma2 * np.eye(M)
        scenario._psi = cached
    return cached


def estimation_matrices(scenario: Scenario) -> np.ndarray:
    """``sqrt(p_hat[l,k]) R[l,k,j] Psi[j,k]^{-1}`` for every link, shape (L, K, L, M, M)."""
    cached = getattr(scenario, "_est", None)
    if cached is None:
        psi = compute_psi_all(scenario)
        psi_inv = np.linalg.inv(psi)  # (j, k, M, M)
        psi_inv = 0.5 * (psi_inv + np.conj(np.swapaxes(psi_inv, -1, -2)))
        amp = np.sqrt(scenario.pilot_power)[:, :, None, None, None]
        cached = amp * np.einsum("lkjmn,jkno->lkjmo", scenario.R, psi_inv)
        scenario._est = cached
    return cached


def mmse_estimate(Y_j: np.ndarray, scenario: Scenario, j: int, targets=None) -> np.ndarray:
    """MMSE estimates at BS j from its received pilot matrix.

    Parameters
    ----------
    Y_j : ndarray, shape (M, K)
    targets : iterable of (l, k), optional
        Channels to estimate; defaults to BS j's own users.

    Returns
    -------
    ndarray, shape (len(targets), M)
    """
    psi = compute_psi_all(scenario)
    eig_min = np.linalg.eigvalsh(psi[j])[:, 0]
    assert np.all(eig_min > 0), "Psi must be positive definite"
    if targets is None:
        targets = [(j, k) for k in range(scenario.K)]
    A = estimation_matrices(scenario)
    proj = np.sqrt(scenario.K) * Y_j  # column k is Y_j phi_k
    return np.stack([A[l, k, j] @ proj[:, k] for l, k in targets])


def estimate_own(scenario: Scenario, Y: np.ndarray) -> np.ndarray:
    """Batched own-cell estimates ``h_hat[..., j, k, :]`` from pilots of shape (..., L, M, K)."""
    A = estimation_matrices(scenario)
    L = scenario.L
    own = A[np.arange(L), :, np.arange(L)]  # (j, k, M, M)
    proj = project_pilots(Y)  # (..., j, k, M)
    return np.einsum("jkmn,...jkn->...jkm", own, proj)


def estimate_covariance(scenario: Scenario) -> np.ndarray:
    """``Phi[l,k,j] = K p_hat[l,k] R Psi[j,k]^{-1} R`` for every link, shape (L, K, L, M, M)."""
    A = estimation_matrices(scenario)  # sqrt(p) R Psi^-1
    amp = np.sqrt(scenario.pilot_power)[:, :, None, None, None]
    return scenario.K * amp * (A @ scenario.R)


def estimate_set(scenario: Scenario, Y: np.ndarray) -> EstimateSet:
    return EstimateSet(
        h_hat=estimate_own(scenario, Y),
        psi=compute_psi_all(scenario),
        phi=estimate_covariance(scenario),
    )
