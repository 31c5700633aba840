"""Sum-SE maximization over data powers and LSFD vectors by weighted MMSE.

The sum-SE problem is handled through its weighted-MSE reformulation,

    minimize  sum_{l,k} w_{l,k} e_{l,k} - ln w_{l,k}
    s.t.      0 <= rho_{l,k} <= sqrt(P_max),

with block-coordinate updates u -> w -> a -> rho, each solved in closed
form.  The single-layer variant freezes ``a`` at the serving-BS selector.

The per-user functions here (`mse_e`, `update_u`, ...) are the readable
reference; `maximize_sum_se` runs whole sweeps through the kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .spectral_efficiency import (
    ClosedFormCoefficients,
    SeReport,
    optimal_lsfd_all,
    se_from_sinr,
    single_layer_lsfd,
    sinr_closed_form_all,
)

__all__ = [
    "OptimizerError",
    "OptimizerConfig",
    "OptimizerState",
    "OptimizationResult",
    "mse_e",
    "u_tilde",
    "update_u",
    "update_w",
    "update_a",
    "update_rho",
    "surrogate_objective",
    "maximize_sum_se",
    "maximize_sum_se_single_layer",
]

MONOTONE_SLACK = 1e-6


class OptimizerError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class OptimizerConfig:
    eps: float = 1e-6
    max_iters: int = 500
    init: str = "random"  # "random" | "random-sqrt" | "full"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.init not in ("random", "random-sqrt", "full"):
            raise ValueError(f"unknown init policy {self.init!r}")


@dataclass
class OptimizerState:
    rho: np.ndarray  # (L, K), sqrt(mW)
    a: np.ndarray  # (L, K, L)
    u: np.ndarray  # (L, K)
    w: np.ndarray  # (L, K)
    iteration: int = 0
    history: list = field(default_factory=list)  # sum SE per cell, bits/s/Hz

    @property
    def power(self):
        return self.rho ** 2

    def copy(self):
        return OptimizerState(self.rho.copy(), self.a.copy(), self.u.copy(), self.w.copy(),
                              self.iteration, list(self.history))


@dataclass
class OptimizationResult:
    report: SeReport
    state: OptimizerState
    history: np.ndarray
    converged: bool


# ---------------------------------------------------------------------------
# per-user reference updates
# ---------------------------------------------------------------------------

def _s(coeffs, a_lk, k):
    """``s[l'] = sum_j conj(a[j]) b[l', k, j]`` for one LSFD vector."""
    return coeffs.b[:, k, :] @ np.conj(a_lk)


def u_tilde(coeffs: ClosedFormCoefficients, rho, a_lk, k) -> float:
    p = rho ** 2
    s = _s(coeffs, a_lk, k)
    cs = np.einsum("jlq,lq->j", coeffs.c[:, k], p)
    a2 = np.abs(a_lk) ** 2
    return float(np.sum(p[:, k] * np.abs(s) ** 2) + np.sum(a2 * (cs + coeffs.d[:, k])))


def mse_e(coeffs: ClosedFormCoefficients, state: OptimizerState, l, k) -> float:
    """MSE of user (l, k) at the state's (u, a, rho)."""
    a_lk = state.a[l, k]
    u = state.u[l, k]
    own = _s(coeffs, a_lk, k)[l]
    ut = u_tilde(coeffs, state.rho, a_lk, k)
    return float(abs(u) ** 2 * ut - 2.0 * state.rho[l, k] * np.real(u * own) + 1.0)


def update_u(coeffs, state, l, k) -> complex:
    ut = u_tilde(coeffs, state.rho, state.a[l, k], k)
    if ut <= 0:
        return 0j
    own = _s(coeffs, state.a[l, k], k)[l]
    return complex(state.rho[l, k] * np.conj(own) / ut)


def update_w(e_value: float) -> float:
    if not e_value > 0:
        raise OptimizerError(f"non-positive MSE {e_value!r}: numerical corruption")
    return 1.0 / e_value


def update_a(coeffs, state, l, k) -> np.ndarray:
    """Exact minimizer of the MSE over ``a`` for fixed (u, rho).

    Zero ``u`` leaves ``a`` unchanged.
    """
    u = state.u[l, k]
    if u == 0:
        return state.a[l, k].copy()
    p = state.rho ** 2
    b = coeffs.b[:, k, :]
    C = np.einsum("m,mi,mj->ij", p[:, k], b, np.conj(b))
    C += np.diag(np.einsum("jlq,lq->j", coeffs.c[:, k], p) + coeffs.d[:, k])
    try:
        x = np.linalg.solve(C, coeffs.b[l, k])
    except np.linalg.LinAlgError as exc:
        raise OptimizerError("singular LSFD system", state) from exc
    return state.rho[l, k] / np.conj(u) * x


def update_rho(coeffs, state, l, k, rho_max) -> float:
    """Closed-form power update, clamped to ``[0, rho_max]``."""
    L, K = state.rho.shape
    w, u, a = state.w, state.u, state.a
    wu2 = w * np.abs(u) ** 2
    num = w[l, k] * np.real(u[l, k] * _s(coeffs, a[l, k], k)[l])
    den = 0.0
    for m in range(L):
        den += wu2[m, k] * abs(_s(coeffs, a[m, k], k)[l]) ** 2
    for m in range(L):
        for q in range(K):
            den += wu2[m, q] * np.sum(np.abs(a[m, q]) ** 2 * coeffs.c[:, q, l, k])
    if num <= 0:
        return 0.0
    if den <= 0:
        return float(rho_max)
    return float(min(num / den, rho_max))


def surrogate_objective(coeffs, state) -> float:
    """``sum w e - ln w`` at the state."""
    L, K = state.rho.shape
    total = 0.0
    for l in range(L):
        for k in range(K):
            total += state.w[l, k] * mse_e(coeffs, state, l, k) - np.log(state.w[l, k])
    return total


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def _sum_se_per_cell(coeffs, rho, a, prelog):
    sinr = sinr_closed_form_all(coeffs, rho ** 2, a)
    return float(se_from_sinr(sinr, prelog).sum() / coeffs.L)


def _initial_rho(p_max, opt_config, rng, rho0):
    rho_max = np.sqrt(p_max)
    if rho0 is not None:
        return np.clip(np.asarray(rho0, dtype=float), 0.0, rho_max).copy()
    if opt_config.init == "full":
        return rho_max.copy()
    if rng is None:
        raise ValueError("random initialization needs an rng")
    if opt_config.init == "random-sqrt":
        return rng.uniform(0.0, 1.0, size=p_max.shape) * rho_max
    # powers uniform over the feasible set [0, P_max]
    return np.sqrt(rng.uniform(0.0, 1.0, size=p_max.shape) * p_max)


def _refresh_uw(coeffs, state):
    """Recompute (u, w) at the returned (rho, a); the sweep's own values
    predate its a- and rho-updates."""
    L, K = state.rho.shape
    for l in range(L):
        for k in range(K):
            state.u[l, k] = update_u(coeffs, state, l, k)
    for l in range(L):
        for k in range(K):
            state.w[l, k] = update_w(mse_e(coeffs, state, l, k))


def _run(coeffs, p_max, opt_config, rng, rho0, two_layer, prelog):
    L, K = coeffs.L, coeffs.K
    p_max = np.broadcast_to(np.asarray(p_max, dtype=float), (L, K))
    rho_max = np.ascontiguousarray(np.sqrt(p_max))
    rho = np.ascontiguousarray(_initial_rho(p_max, opt_config, rng, rho0))
    if two_layer:
        a = optimal_lsfd_all(coeffs, rho ** 2)
    else:
        a = single_layer_lsfd(L, K)
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(coeffs.b, dtype=complex)
    c = np.ascontiguousarray(coeffs.c, dtype=float)
    d = np.ascontiguousarray(coeffs.d, dtype=float)

    state = OptimizerState(rho, a, np.zeros((L, K), complex), np.ones((L, K)))
    state.history.append(_sum_se_per_cell(coeffs, rho, a, prelog))
    converged = False
    for it in range(1, opt_config.max_iters + 1):
        try:
            u, w = kernels.wmmse_sweep(b, c, d, rho, a, rho_max, two_layer)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise OptimizerError(str(exc), state.copy()) from exc
        state.u, state.w = np.asarray(u), np.asarray(w)
        state.iteration = it
        value = _sum_se_per_cell(coeffs, rho, a, prelog)
        if value < state.history[-1] - MONOTONE_SLACK:
            raise OptimizerError(
                f"sum SE decreased from {state.history[-1]:.9g} to {value:.9g} "
                f"at iteration {it}", state.copy())
        state.history.append(value)
        if abs(state.history[-1] - state.history[-2]) <= opt_config.eps:
            converged = True
            break

    _refresh_uw(coeffs, state)
    sinr = sinr_closed_form_all(coeffs, rho ** 2, a)
    report = SeReport.from_sinr(sinr, a, rho ** 2, prelog)
    return OptimizationResult(report, state, np.asarray(state.history), converged)


def maximize_sum_se(coeffs: ClosedFormCoefficients, p_max, opt_config=OptimizerConfig(),
                    rng=None, rho0=None, prelog: float = 1.0) -> OptimizationResult:
    """Joint power and LSFD optimization (two-layer decoding).

    Starts from ``rho0`` if given, else from the config's init policy; the
    initial LSFD vectors are the optimal ones for the initial powers.
    ``history`` holds the sum SE per cell (scaled by ``prelog``) before the
    first sweep and after every sweep.
    """
    return _run(coeffs, p_max, opt_config, rng, rho0, True, prelog)


def maximize_sum_se_single_layer(coeffs: ClosedFormCoefficients, p_max,
                                 opt_config=OptimizerConfig(), rng=None, rho0=None,
                                 prelog: float = 1.0) -> OptimizationResult:
    """Power control only, each user decoded by its serving BS alone."""
    return _run(coeffs, p_max, opt_config, rng, rho0, False, prelog)
