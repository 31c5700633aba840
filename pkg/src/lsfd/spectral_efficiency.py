"""Achievable uplink SE with two-layer decoding.

Two independent routes are provided:

* Monte Carlo: sample coherence blocks, form the first-layer outputs
  ``v^H h`` for any combiner and estimate every expectation that enters the
  use-and-then-forget SINR (`estimate_expectations`, `sinr_general`).
* Closed form for MRC: the trace coefficients ``b, c, d``
  (`closed_form_coefficients`, `sinr_closed_form`).

The closed-form coefficients correspond to the combiner ``v / sqrt(K)``;
SINRs are invariant to that scaling, so only SINRs/SEs should be compared
across the two routes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from ._backend import kernels
from .combiners import combine
from .scenario import Scenario

__all__ = [
    "SingularSystemError",
    "ExpectationSet",
    "ClosedFormCoefficients",
    "SeReport",
    "estimate_expectations",
    "optimal_lsfd_general",
    "sinr_general",
    "sinr_general_stderr",
    "se_general",
    "closed_form_coefficients",
    "sinr_closed_form",
    "sinr_closed_form_all",
    "corollary_matrix",
    "optimal_lsfd_closed_form",
    "optimal_lsfd_all",
    "se_from_sinr",
    "single_layer_lsfd",
]


class SingularSystemError(np.linalg.LinAlgError):
    pass


def se_from_sinr(sinr, prelog: float):
    return prelog * np.log2(1.0 + np.asarray(sinr))


def _hermitize(X):
    return 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))


def _solve_checked(C, b, max_cond=1e14):
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularSystemError(f"LSFD system is singular (condition number {cond:.3e})")
    return np.linalg.solve(C, b)


# ---------------------------------------------------------------------------
# Monte Carlo route
# ---------------------------------------------------------------------------

@dataclass
class ExpectationSet:
    """Sample means of the first-layer outputs ``g[j, k, l, q] = v_{j,k}^H h_{l,q}^j``.

    Attributes
    ----------
    g_mean : ndarray, shape (L, K, L, K)
        ``E{g[j, k, l, q]}``.
    second : ndarray, shape (K, L, K, L, L)
        ``second[k, l, q]`` is ``E{z z^H}`` with ``z[j] = g[j, k, l, q]``.
    vnorm2 : ndarray, shape (L, K)
        ``E{||v_{j,k}||^2}``.
    batches : list of ExpectationSet
        The same quantities on disjoint batches of blocks, for standard errors.
    """

    g_mean: np.ndarray
    second: np.ndarray
    vnorm2: np.ndarray
    sigma2: float
    n_blocks: int
    scheme: str
    batches: list = field(default_factory=list, repr=False)

    @property
    def L(self):
        return self.g_mean.shape[0]

    @property
    def K(self):
        return self.g_mean.shape[1]

    @property
    def b(self) -> np.ndarray:
        """``b[l, k, j] = E{v_{j,k}^H h_{l,k}^j}``, shape (L, K, L)."""
        K = self.K
        kk = np.arange(K)
        # g_mean[j, k, l, k] -> (j, k, l)
        diag = self.g_mean[:, kk, :, kk]  # (k, j, l)
        return np.transpose(diag, (2, 0, 1))

    def b_vector(self, l, k):
        return self.b[l, k]

    @property
    def b_stderr(self) -> np.ndarray:
        if len(self.batches) < 2:
            return np.full(self.b.shape, np.inf)
        stack = np.stack([bt.b for bt in self.batches])
        return np.std(stack, axis=0, ddof=1) / np.sqrt(len(self.batches))

    def matrices(self, p, l, k):
        """``(C1, C2, C3, C4)`` for user (l, k) at data powers ``p`` (L, K)."""
        b = self.b[:, k, :]  # (l', j)
        outer = b[:, :, None] * np.conj(b[:, None, :])  # (l', j, j')
        mask = np.arange(self.L) != l
        C1 = np.einsum("l,lij->ij", p[mask, k], outer[mask])
        central = self.second[k, :, k] - outer
        C2 = np.einsum("l,lij->ij", p[:, k], central)
        others = np.arange(self.K) != k
        C3 = np.einsum("lq,lqij->ij", p[:, others], self.second[k][:, others])
        C4 = np.diag(self.sigma2 * self.vnorm2[:, k]).astype(complex)
        return tuple(_hermitize(C) for C in (C1, C2, C3, C4))

    def interference_matrix(self, p, l, k):
        return sum(self.matrices(p, l, k))


def _accumulate(scenario, scheme, data_powers, rng, n, power_weighted):
    real = ch.sample_channels(scenario, rng, n)
    Y = ch.pilot_received(scenario, real, rng)
    h_hat = ch.estimate_own(scenario, Y)  # (B, j, k, M)
    H = np.swapaxes(h_hat, -1, -2)  # (B, j, M, k)
    V = combine(scheme, H, data_powers, scenario.sigma2, power_weighted).v
    V = np.swapaxes(V, -1, -2)  # (B, j, k, M)
    # g[b, j, k, l, q] = v_{j,k}^H h_{l,q}^j
    g = np.einsum("bjkm,blqjm->bjklq", np.conj(V), real.h, optimize=True)
    g_sum = g.sum(axis=0)
    # z over BSs j for each (k, l, q)
    z = np.transpose(g, (0, 2, 3, 4, 1))  # (B, k, l, q, j)
    second_sum = np.einsum("bklqi,bklqj->klqij", z, np.conj(z), optimize=True)
    vnorm_sum = np.sum(np.abs(V) ** 2, axis=(0, -1))
    return g_sum, second_sum, vnorm_sum


def estimate_expectations(scenario: Scenario, combiner_scheme: str, n_blocks: int,
                          data_powers=None, seed: int | None = None, stream: int = 0,
                          n_batches: int = 20, chunk_size: int | None = None,
                          power_weighted: bool = True) -> ExpectationSet:
    """Sample means over ``n_blocks`` independent coherence blocks.

    Blocks are drawn in fixed chunks, each with its own generator keyed by
    (seed, drop, stream, chunk), so results do not depend on how the work is
    scheduled.  ``data_powers`` is only used by RZF (defaults to ``p_max``).
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    L, K, M = scenario.L, scenario.K, scenario.M
    if data_powers is None:
        data_powers = scenario.p_max
    seed = scenario.config.seed if seed is None else seed
    n_batches = max(1, min(n_batches, n_blocks))
    if chunk_size is None:
        chunk_size = max(1, int(2_000_000 // (L * K * L * M)))
    edges = np.linspace(0, n_blocks, n_batches + 1).round().astype(int)

    batches = []
    chunk = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        g_sum = np.zeros((L, K, L, K), complex)
        second_sum = np.zeros((K, L, K, L, L), complex)
        vnorm_sum = np.zeros((L, K))
        start = lo
        while start < hi:
            n = min(chunk_size, hi - start)
            rng = ch.block_rng(seed, scenario.drop_index, stream, chunk)
            gs, ss, vs = _accumulate(scenario, combiner_scheme, data_powers, rng, n,
                                     power_weighted)
            g_sum += gs
            second_sum += ss
            vnorm_sum += vs
            start += n
            chunk += 1
        count = hi - lo
        batches.append(ExpectationSet(g_sum / count, _hermitize(second_sum / count),
                                      vnorm_sum / count, scenario.sigma2, int(count),
                                      combiner_scheme.upper()))

    weights = np.array([bt.n_blocks for bt in batches], dtype=float) / n_blocks
    g_mean = sum(w * bt.g_mean for w, bt in zip(weights, batches))
    second = sum(w * bt.second for w, bt in zip(weights, batches))
    vnorm2 = sum(w * bt.vnorm2 for w, bt in zip(weights, batches))
    return ExpectationSet(g_mean, _hermitize(second), vnorm2, scenario.sigma2, n_blocks,
                          combiner_scheme.upper(), batches=batches)


def optimal_lsfd_general(exp: ExpectationSet, p, l, k):
    """``a = (C1 + C2 + C3 + C4)^{-1} b_{l,k}``."""
    return _solve_checked(exp.interference_matrix(p, l, k), exp.b[l, k])


def sinr_general(exp: ExpectationSet, a, p, l, k):
    """Use-and-then-forget SINR of user (l, k) for LSFD vector ``a``."""
    a = np.asarray(a, dtype=complex)
    num = p[l, k] * np.abs(np.vdot(a, exp.b[l, k])) ** 2
    den = np.real(np.vdot(a, exp.interference_matrix(p, l, k) @ a))
    if den <= 0:
        return 0.0
    return float(num / den)


def _leave_one_out(exp: ExpectationSet, i: int) -> ExpectationSet:
    bt = exp.batches[i]
    n = exp.n_blocks - bt.n_blocks
    w_all, w_bt = exp.n_blocks / n, bt.n_blocks / n
    return ExpectationSet(w_all * exp.g_mean - w_bt * bt.g_mean,
                          w_all * exp.second - w_bt * bt.second,
                          w_all * exp.vnorm2 - w_bt * bt.vnorm2,
                          exp.sigma2, n, exp.scheme)


def sinr_general_stderr(exp: ExpectationSet, a, p, l, k):
    """Jackknife (leave one batch out) standard error of `sinr_general`.

    Infinite with fewer than 2 batches.  Unlike plain batch means, the
    jackknife does not saturate when a heavy-tailed block drives one
    batch's SINR towards zero.
    """
    n = len(exp.batches)
    if n < 2:
        return np.inf
    vals = np.array([sinr_general(_leave_one_out(exp, i), a, p, l, k) for i in range(n)])
    return float(np.sqrt((n - 1) / n * np.sum((vals - vals.mean()) ** 2)))


def se_general(exp: ExpectationSet, a, p, l, k, tau_c, K):
    return float(se_from_sinr(sinr_general(exp, a, p, l, k), 1.0 - K / tau_c))


# ---------------------------------------------------------------------------
# Closed form (MRC)
# ---------------------------------------------------------------------------

@dataclass
class ClosedFormCoefficients:
    """MRC trace coefficients.

    ``b[l, k, j]`` (complex in general, real when the correlation matrices
    commute), ``c[j, k, l, q]`` and ``d[j, k]`` as in the kernel modules.
    """

    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def L(self):
        return self.b.shape[0]

    @property
    def K(self):
        return self.b.shape[1]

    def copy(self):
        return ClosedFormCoefficients(self.b.copy(), self.c.copy(), self.d.copy())


def closed_form_coefficients(scenario: Scenario) -> ClosedFormCoefficients:
    L, K = scenario.L, scenario.K
    R = scenario.R
    pp = scenario.pilot_power
    psi_inv = _hermitize(np.linalg.inv(ch.compute_psi_all(scenario)))  # (j, k)
    jj = np.arange(L)
    R_own = R[jj, :, jj]  # (j, k): R[j, k, j]
    T = psi_inv @ R_own  # Psi^-1 R_jj
    # tr(Psi_jk^-1 R_jkj R_lkj)
    tr_b = np.einsum("jkmn,lkjnm->lkj", T, R, optimize=True)
    b = np.sqrt(K * pp[:, :, None] * pp.T[None, :, :]) * tr_b
    Q = _hermitize(R_own @ T)  # R Psi^-1 R
    c = pp[:, :, None, None] * np.real(np.einsum("jkmn,lqjnm->jklq", Q, R, optimize=True))
    d = scenario.sigma2 * pp * np.real(np.trace(Q, axis1=-2, axis2=-1))
    return ClosedFormCoefficients(b, c, d)


def _as_arrays(coeffs, p, a):
    p = np.ascontiguousarray(p, dtype=float)
    a = np.ascontiguousarray(a, dtype=complex)
    return (np.ascontiguousarray(coeffs.b, dtype=complex),
            np.ascontiguousarray(coeffs.c, dtype=float),
            np.ascontiguousarray(coeffs.d, dtype=float), p, a)


def sinr_closed_form_all(coeffs: ClosedFormCoefficients, p, a) -> np.ndarray:
    """SINR of every user; ``a`` has shape (L, K, L)."""
    return np.asarray(kernels.sinr_all(*_as_arrays(coeffs, p, a)))


def sinr_closed_form(coeffs: ClosedFormCoefficients, p, a, l, k) -> float:
    """Closed-form SINR of one user with LSFD vector ``a`` (length L)."""
    a = np.asarray(a, dtype=complex)
    b, c, d = coeffs.b, coeffs.c, coeffs.d
    s = np.conj(a) @ b[:, k, :].T  # s[l'] = a^H b_{l',k}
    num = p[l, k] * abs(s[l]) ** 2
    pc = sum(p[m, k] * abs(s[m]) ** 2 for m in range(coeffs.L) if m != l)
    cs = np.einsum("jlq,lq->j", c[:, k], p)
    den = pc + np.sum(np.abs(a) ** 2 * (cs + d[:, k]))
    return float(num / den) if den > 0 else 0.0


def corollary_matrix(coeffs: ClosedFormCoefficients, p, l, k) -> np.ndarray:
    """Interference-plus-noise matrix whose inverse gives the optimal LSFD vector."""
    b = coeffs.b[:, k, :]
    mask = np.arange(coeffs.L) != l
    C = np.einsum("l,li,lj->ij", p[mask, k], b[mask], np.conj(b[mask]))
    cs = np.einsum("jlq,lq->j", coeffs.c[:, k], p)
    C = C + np.diag(cs + coeffs.d[:, k])
    return _hermitize(C)


def optimal_lsfd_closed_form(coeffs: ClosedFormCoefficients, p, l, k, prelog: float = 1.0):
    """Optimal LSFD vector of user (l, k) and its SE.

    Returns ``(a, se)`` with ``se = prelog * log2(1 + p b^H C^{-1} b)``.
    """
    C = corollary_matrix(coeffs, p, l, k)
    b = coeffs.b[l, k]
    a = _solve_checked(C, b)
    sinr = p[l, k] * np.real(np.vdot(b, a))
    return a, float(se_from_sinr(max(sinr, 0.0), prelog))


def optimal_lsfd_all(coeffs: ClosedFormCoefficients, p) -> np.ndarray:
    """Optimal LSFD vectors of every user, shape (L, K, L)."""
    L, K = coeffs.L, coeffs.K
    a = np.empty((L, K, L), complex)
    for l in range(L):
        for k in range(K):
            a[l, k] = _solve_checked(corollary_matrix(coeffs, p, l, k), coeffs.b[l, k])
    return a


def single_layer_lsfd(L: int, K: int) -> np.ndarray:
    """LSFD vectors selecting the serving BS only."""
    a = np.zeros((L, K, L), complex)
    a[np.arange(L), :, np.arange(L)] = 1.0
    return a


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class SeReport:
    """Per-user results of one evaluation; arrays are (L, K) or (L, K, L)."""

    se: np.ndarray
    sinr: np.ndarray
    lsfd: np.ndarray
    power_mw: np.ndarray
    prelog: float

    @classmethod
    def from_sinr(cls, sinr, a, p, prelog):
        sinr = np.asarray(sinr, dtype=float)
        return cls(se_from_sinr(sinr, prelog), sinr, np.asarray(a, complex),
                   np.asarray(p, float), float(prelog))

    @property
    def sum_se_per_cell(self) -> np.ndarray:
        return self.se.sum(axis=1)

    @property
    def mean_sum_se_per_cell(self) -> float:
        return float(self.se.sum() / self.se.shape[0])

    def to_dict(self) -> dict:
        return {
            "prelog": self.prelog,
            "sum_se_per_cell": self.sum_se_per_cell.tolist(),
            "users": self.rows(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def rows(self) -> list[dict]:
        L, K = self.se.shape
        out = []
        for l in range(L):
            for k in range(K):
                row = {
                    "cell": l,
                    "user": k,
                    "power_mw": float(self.power_mw[l, k]),
                    "sinr": float(self.sinr[l, k]),
                    "se_bits_per_hz": float(self.se[l, k]),
                }
                for j in range(L):
                    row[f"lsfd_{j}_re"] = float(self.lsfd[l, k, j].real)
                    row[f"lsfd_{j}_im"] = float(self.lsfd[l, k, j].imag)
                out.append(row)
        return out

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()
