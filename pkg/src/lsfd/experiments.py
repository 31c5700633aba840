"""Per-drop evaluation of the four benchmark methods and the oracle checks
behind ``lsfd-sim validate``.

Methods (all MRC in the first layer unless stated):

i    single-layer, full power
ii   single-layer, powers from the weighted-MMSE iteration with ``a`` frozen
iii  two-layer, full power, optimal LSFD
iv   two-layer, joint power/LSFD optimization
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .optimizer import OptimizerConfig, maximize_sum_se, maximize_sum_se_single_layer
from .scenario import NetworkConfig, Scenario, generate_scenario
from .spectral_efficiency import (
    closed_form_coefficients,
    estimate_expectations,
    optimal_lsfd_all,
    optimal_lsfd_general,
    se_from_sinr,
    single_layer_lsfd,
    sinr_closed_form,
    sinr_closed_form_all,
    sinr_general,
    sinr_general_stderr,
)

METHODS = ("i", "ii", "iii", "iv")


def drop_rng(seed: int, drop_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, drop_index, 2, purpose]))


@dataclass
class DropResult:
    drop: int
    sum_se: dict  # method -> sum SE per cell
    histories: dict = field(default_factory=dict)  # method -> random-start trace
    random_start: dict = field(default_factory=dict)  # method -> (initial, final)


def evaluate_drop(config: NetworkConfig, drop: int, methods=METHODS,
                  opt_config: OptimizerConfig = OptimizerConfig(),
                  multistart: bool = True) -> DropResult:
    """Sum SE per cell of the requested methods on one drop.

    The optimized methods always run from the uniformly random initial
    powers (their trace is kept in ``histories``).  With ``multistart`` they
    are also started from full power and, for iv, from the powers found by
    ii; the best stationary point is reported, which guarantees
    ii >= i, iv >= iii and iv >= ii on every drop.
    """
    sc = generate_scenario(config, drop)
    coeffs = closed_form_coefficients(sc)
    L, K = config.L, config.K
    prelog = config.prelog
    p_full = sc.p_max

    def fixed(a):
        return float(se_from_sinr(sinr_closed_form_all(coeffs, p_full, a), prelog).sum() / L)

    out = DropResult(drop, {})
    if "i" in methods:
        out.sum_se["i"] = fixed(single_layer_lsfd(L, K))
    if "iii" in methods:
        out.sum_se["iii"] = fixed(optimal_lsfd_all(coeffs, p_full))

    ii_best = None
    if "ii" in methods or ("iv" in methods and multistart):
        res = maximize_sum_se_single_layer(coeffs, p_full, opt_config,
                                           rng=drop_rng(config.seed, drop, 1), prelog=prelog)
        out.histories["ii"] = res.history
        out.random_start["ii"] = (res.history[0], res.history[-1])
        ii_best = res
        if multistart:
            full = maximize_sum_se_single_layer(coeffs, p_full, opt_config,
                                                rho0=np.sqrt(p_full), prelog=prelog)
            if full.history[-1] > ii_best.history[-1]:
                ii_best = full
        if "ii" in methods:
            out.sum_se["ii"] = float(ii_best.history[-1])

    if "iv" in methods:
        res = maximize_sum_se(coeffs, p_full, opt_config,
                              rng=drop_rng(config.seed, drop, 2), prelog=prelog)
        out.histories["iv"] = res.history
        out.random_start["iv"] = (res.history[0], res.history[-1])
        best = res.history[-1]
        if multistart:
            starts = [np.sqrt(p_full), np.sqrt(ii_best.report.power_mw)]
            for rho0 in starts:
                alt = maximize_sum_se(coeffs, p_full, opt_config, rho0=rho0, prelog=prelog)
                best = max(best, alt.history[-1])
        out.sum_se["iv"] = float(best)
    return out


def evaluate_cdf_drop(config: NetworkConfig, drop: int, n_blocks: int,
                      schemes=("MRC", "RZF")) -> dict:
    """Sum SE per cell at full power for single/two-layer decoding per scheme.

    MRC uses the closed form; other schemes use Monte Carlo expectations.
    """
    sc = generate_scenario(config, drop)
    L, K = config.L, config.K
    p = sc.p_max
    out = {}
    for scheme in schemes:
        if scheme.upper() == "MRC":
            coeffs = closed_form_coefficients(sc)
            single = sinr_closed_form_all(coeffs, p, single_layer_lsfd(L, K))
            two = sinr_closed_form_all(coeffs, p, optimal_lsfd_all(coeffs, p))
        else:
            exp = estimate_expectations(sc, scheme, n_blocks, data_powers=p, stream=7)
            e = single_layer_lsfd(L, K)
            single = np.array([[sinr_general(exp, e[l, k], p, l, k) for k in range(K)]
                               for l in range(L)])
            two = np.array([[sinr_general(exp, optimal_lsfd_general(exp, p, l, k), p, l, k)
                             for k in range(K)] for l in range(L)])
        out[(scheme.upper(), "single")] = float(se_from_sinr(single, config.prelog).sum() / L)
        out[(scheme.upper(), "two")] = float(se_from_sinr(two, config.prelog).sum() / L)
    return out


# ---------------------------------------------------------------------------
# oracle checks
# ---------------------------------------------------------------------------

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@dataclass
class Check:
    name: str
    status: str
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        return (f"[{self.status.upper():>12}] {self.name}: measured={self.measured:.4g} "
                f"tolerance={self.tolerance:.4g} {self.detail}").rstrip()


def _combine(name, checks):
    statuses = {c.status for c in checks}
    status = FAIL if FAIL in statuses else INCONCLUSIVE if INCONCLUSIVE in statuses else PASS
    worst = max(checks, key=lambda c: c.measured / c.tolerance if c.tolerance > 0 else np.inf)
    return Check(name, status, worst.measured, worst.tolerance, worst.detail)


def check_closed_form_vs_mc(sc: Scenario, n_blocks: int, rel_tol=0.02, n_sigma=3.0,
                            corrupt_c: bool = False, max_rel_se=0.25) -> list[Check]:
    """Closed-form MRC SINR against Monte Carlo SINR for every user, for
    ``a = e_l`` and for the optimal closed-form LSFD vector."""
    coeffs = closed_form_coefficients(sc)
    if corrupt_c:
        idx = np.unravel_index(np.argmax(coeffs.c), coeffs.c.shape)
        coeffs.c[idx] *= 2.0
    exp = estimate_expectations(sc, "MRC", n_blocks, stream=3)
    p = sc.p_max
    L, K = sc.L, sc.K
    checks = []
    for label, a_all in (("a=e_l", single_layer_lsfd(L, K)),
                         ("a=optimal", optimal_lsfd_all(coeffs, p))):
        for l in range(L):
            for k in range(K):
                ref = sinr_closed_form(coeffs, p, a_all[l, k], l, k)
                mc = sinr_general(exp, a_all[l, k], p, l, k)
                se = sinr_general_stderr(exp, a_all[l, k], p, l, k)
                tol = max(rel_tol * abs(ref), n_sigma * se)
                err = abs(mc - ref)
                if not np.isfinite(se) or se > max_rel_se * abs(ref):
                    status = INCONCLUSIVE
                else:
                    status = PASS if err <= tol else FAIL
                checks.append(Check(
                    f"sinr {label} drop={sc.drop_index} user=({l},{k})", status, err,
                    tol if np.isfinite(tol) else np.inf,
                    f"closed={ref:.5g} mc={mc:.5g} se={se:.3g}"))
    return checks


def _cov_check(name, S, n, target, rel_tol):
    """Sample covariance ``S`` over ``n`` samples against ``target`` in Frobenius norm."""
    norm = np.linalg.norm(target)
    err = np.linalg.norm(S - target) / norm
    # exact E||S - T||_F^2 for complex Gaussian samples is tr(T)^2 / n
    expected = np.real(np.trace(target)) / np.sqrt(n) / norm
    tol = max(rel_tol, 3.0 * expected)
    status = INCONCLUSIVE if n < 2 else PASS if err <= tol else FAIL
    return Check(name, status, err, tol, f"n={n} expected_err={expected:.3g}")


def check_estimation(sc: Scenario, n_samples: int, rel_tol=0.05, seed_stream=11,
                     chunk_size=10_000) -> list[Check]:
    """Psi, Phi and error-orthogonality checks from simulated pilot phases.

    Samples are drawn and reduced in chunks, so memory does not grow with
    ``n_samples``.
    """
    L, K, M = sc.L, sc.K, sc.M
    j, k = 0, 0
    S_proj = np.zeros((M, M), complex)
    S_hat = np.zeros((M, M), complex)
    cross = np.zeros((M, M), complex)
    done, chunk = 0, 0
    while done < n_samples:
        n = min(chunk_size, n_samples - done)
        rng = ch.block_rng(sc.config.seed, sc.drop_index, seed_stream, chunk)
        real = ch.sample_channels(sc, rng, n)
        Y = ch.pilot_received(sc, real, rng)
        proj = ch.project_pilots(Y)[:, j, k, :] / np.sqrt(K)
        h_hat = ch.estimate_own(sc, Y)[:, j, k, :]
        err = real.h[:, j, k, j, :] - h_hat
        S_proj += proj.T @ np.conj(proj)
        S_hat += h_hat.T @ np.conj(h_hat)
        cross += h_hat.T @ np.conj(err)
        done += n
        chunk += 1

    psi = ch.compute_psi_all(sc)[j, k]
    phi = ch.estimate_covariance(sc)[j, k, j]
    checks = [_cov_check("psi covariance", S_proj / n_samples, n_samples, psi, rel_tol),
              _cov_check("phi covariance", S_hat / n_samples, n_samples, phi, rel_tol)]

    R = sc.R[j, k, j]
    orth = np.linalg.norm(cross / n_samples) / np.linalg.norm(phi)
    expected = (np.sqrt(np.real(np.trace(phi)) * np.real(np.trace(R - phi)) / n_samples)
                / np.linalg.norm(phi))
    tol = max(rel_tol, 3.0 * expected)
    status = INCONCLUSIVE if n_samples < 2 else PASS if orth <= tol else FAIL
    checks.append(Check("estimate/error orthogonality", status, orth, tol, f"n={n_samples}"))
    return checks


def check_lsfd_optimality(sc: Scenario, n_probes=100, slack=1e-10, seed_stream=13) -> Check:
    coeffs = closed_form_coefficients(sc)
    p = sc.p_max
    L, K = sc.L, sc.K
    rng = ch.block_rng(sc.config.seed, sc.drop_index, seed_stream, 0)
    a_opt = optimal_lsfd_all(coeffs, p)
    worst = -np.inf
    for l in range(L):
        for k in range(K):
            best = sinr_closed_form(coeffs, p, a_opt[l, k], l, k)
            probes = [np.eye(L)[l]] + list(
                rng.standard_normal((n_probes, L)) + 1j * rng.standard_normal((n_probes, L)))
            for a in probes:
                rival = sinr_closed_form(coeffs, p, a, l, k)
                worst = max(worst, (rival - best) / max(best, 1e-300))
    return Check("lsfd optimality probes", PASS if worst <= slack else FAIL,
                 max(worst, 0.0), slack, f"drop={sc.drop_index}")


def check_optimizer(sc: Scenario, opt_config=OptimizerConfig(), slack=1e-9) -> Check:
    coeffs = closed_form_coefficients(sc)
    res = maximize_sum_se(coeffs, sc.p_max, opt_config,
                          rng=drop_rng(sc.config.seed, sc.drop_index, 2))
    drop = -float(np.min(np.diff(res.history))) if len(res.history) > 1 else 0.0
    return Check("optimizer monotonicity", PASS if drop <= slack else FAIL, max(drop, 0.0),
                 slack, f"iterations={res.state.iteration}")


def run_validation(config: NetworkConfig, n_drops: int, n_blocks: int,
                   n_estimation: int | None = None, corrupt_c: bool = False) -> list[Check]:
    """All oracle checks on ``n_drops`` drops, aggregated per check family."""
    families: dict[str, list[Check]] = {}
    for drop in range(n_drops):
        sc = generate_scenario(config, drop)
        families.setdefault("closed-form vs Monte Carlo SINR", []).extend(
            check_closed_form_vs_mc(sc, n_blocks, corrupt_c=corrupt_c))
        for c in check_estimation(sc, n_estimation or n_blocks):
            families.setdefault(c.name, []).append(c)
        families.setdefault("lsfd optimality probes", []).append(check_lsfd_optimality(sc))
        families.setdefault("optimizer monotonicity", []).append(check_optimizer(sc))
    return [_combine(name, checks) for name, checks in families.items()]
