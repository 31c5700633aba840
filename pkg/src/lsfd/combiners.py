"""First-layer (local) linear combiners built from own-cell channel estimates.

Every function accepts estimates shaped ``(..., M, K)`` for one cell (columns
are users) and returns combiners with the same shape, so a leading axis of
coherence blocks and/or cells is handled by broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SCHEMES", "CombinerSet", "DegenerateEstimateError", "mrc", "rzf", "zf",
           "combine"]

SCHEMES = ("MRC", "ZF", "RZF")


class DegenerateEstimateError(np.linalg.LinAlgError):
    pass


@dataclass
class CombinerSet:
    """``v[..., l, :, k]`` is the vector BS l uses for its user k."""

    v: np.ndarray
    scheme: str


def mrc(estimates: np.ndarray) -> np.ndarray:
    return estimates


def rzf(estimates: np.ndarray, data_powers, sigma2: float,
        power_weighted: bool = True) -> np.ndarray:
    """``v_k = (sum_k' p_k' h_k' h_k'^H + sigma2 I)^{-1} h_k``.

    Computed through the K x K push-through form
    ``H (P H^H H + sigma2 I)^{-1}``.  With ``power_weighted=False`` every
    user gets unit weight.
    """
    H = np.asarray(estimates)
    K = H.shape[-1]
    p = np.ones(K) if not power_weighted else np.asarray(data_powers, dtype=float)
    gram = np.conj(np.swapaxes(H, -1, -2)) @ H  # (..., K, K)
    system = p[..., :, None] * gram + sigma2 * np.eye(K)
    # solve X (system) = I from the right: v = H system^{-1}
    return H @ np.linalg.inv(system)


def zf(estimates: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Columns of ``H (H^H H)^{-1}``; needs ``M >= K`` and full column rank."""
    H = np.asarray(estimates)
    M, K = H.shape[-2:]
    if M < K:
        raise DegenerateEstimateError(f"ZF needs M >= K (M={M}, K={K})")
    s = np.linalg.svd(H, compute_uv=False)
    if np.any(s[..., -1] <= rcond * s[..., 0]) or np.any(s[..., 0] == 0):
        raise DegenerateEstimateError("estimate matrix is rank deficient")
    gram = np.conj(np.swapaxes(H, -1, -2)) @ H
    return H @ np.linalg.inv(gram)


def combine(scheme: str, estimates: np.ndarray, data_powers=None, sigma2: float = 0.0,
            power_weighted: bool = True) -> CombinerSet:
    """Dispatch on the scheme name.

    ``data_powers`` must broadcast against ``(..., K)``, e.g. shape (L, K)
    for estimates shaped (B, L, M, K).
    """
    scheme = scheme.upper()
    if scheme == "MRC":
        v = mrc(estimates)
    elif scheme == "ZF":
        v = zf(estimates)
    elif scheme == "RZF":
        if data_powers is None:
            raise ValueError("RZF needs data powers")
        v = rzf(estimates, data_powers, sigma2, power_weighted)
    else:
        raise ValueError(f"unknown combining scheme {scheme!r}")
    return CombinerSet(v, scheme)
