"""Network instances: cell layout, user drops, large-scale fading and
spatial correlation.

All powers are kept in mW and all gains on a linear scale; dB values only
appear at the I/O boundary (config files, `pathloss_db`).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigurationError",
    "NetworkConfig",
    "Scenario",
    "generate_scenario",
    "pathloss_db",
    "exp_correlation",
    "effective_noise_mw",
    "wrapped_displacement",
    "grid_shape",
    "load_config",
]

MAX_PLACEMENT_ATTEMPTS = 10_000


class ConfigurationError(ValueError):
    """Raised for invalid or degenerate network configurations."""


@dataclass(frozen=True)
class NetworkConfig:
    L: int = 4
    K: int = 5
    M: int = 100
    tau_c: int = 200
    cell_edge_m: float = 500.0
    min_dist_m: float = 35.0
    varsigma: float = 0.5
    shadow_std_db: float = 7.0
    noise_dbm: float = -96.0
    noise_figure_db: float = 5.0
    pilot_power_mw: float = 200.0
    p_max_mw: float = 200.0
    bandwidth_hz: float = 20e6
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.L < 1:
            raise ConfigurationError(f"L must be >= 1, got {self.L}")
        if not 1 <= self.K <= self.tau_c:
            raise ConfigurationError(
                f"need 1 <= K <= tau_c, got K={self.K}, tau_c={self.tau_c}")
        if self.M < 1:
            raise ConfigurationError(f"M must be >= 1, got {self.M}")
        if not 0.0 <= self.varsigma <= 1.0:
            raise ConfigurationError(
                f"varsigma must lie in [0, 1], got {self.varsigma}")
        if self.pilot_power_mw <= 0 or self.p_max_mw <= 0:
            raise ConfigurationError("powers must be positive")
        if self.min_dist_m <= 0:
            raise ConfigurationError("min_dist_m must be positive")
        if self.cell_edge_m <= 0:
            raise ConfigurationError("cell_edge_m must be positive")
        if self.shadow_std_db < 0:
            raise ConfigurationError("shadow_std_db must be non-negative")

    @property
    def prelog(self) -> float:
        return 1.0 - self.K / self.tau_c

    def with_overrides(self, **overrides) -> "NetworkConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        defaults = cls.__dataclass_fields__
        kwargs = {}
        for name, value in data.items():
            kind = type(defaults[name].default)
            kwargs[name] = kind(value)
        return cls(**kwargs)


def load_config(path, **overrides) -> NetworkConfig:
    """Read a JSON config file; missing fields take their defaults."""
    data = json.loads(Path(path).read_text()) if path else {}
    return NetworkConfig.from_dict(data).with_overrides(**overrides)


@dataclass
class Scenario:
    """One drop of the network.

    Array layouts use ``[l, k, j]`` for "user k of cell l seen at BS j".

    Attributes
    ----------
    config : NetworkConfig
    drop_index : int
    bs_pos : ndarray, shape (L, 2)
    user_pos : ndarray, shape (L, K, 2)
    distance : ndarray, shape (L, K, L)
        Wrap-around distance in meters.
    theta : ndarray, shape (L, K, L)
        Incidence angle of each link at the receiving array.
    beta : ndarray, shape (L, K, L)
        Large-scale fading, linear scale.
    R : ndarray, shape (L, K, L, M, M)
        Spatial correlation matrices with ``trace(R[l, k, j]) = M beta[l, k, j]``.
    sigma2 : float
        Noise variance in mW.
    pilot_power, p_max : ndarray, shape (L, K)
        mW.
    """

    config: NetworkConfig
    drop_index: int
    bs_pos: np.ndarray
    user_pos: np.ndarray
    distance: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    R: np.ndarray
    sigma2: float
    pilot_power: np.ndarray
    p_max: np.ndarray

    @property
    def L(self) -> int:
        return self.config.L

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def M(self) -> int:
        return self.config.M

    def check(self, herm_tol: float = 1e-10, psd_tol: float = 1e-8,
              trace_tol: float = 1e-9):
        """Verify Hermitian/PSD/trace invariants of every correlation matrix."""
        R = self.R
        M = self.M
        if np.any(self.beta <= 0):
            raise ConfigurationError("non-positive large-scale fading")
        herm_err = np.max(np.abs(R - np.conj(np.swapaxes(R, -1, -2))))
        scale = np.max(np.abs(R))
        if herm_err > herm_tol * max(scale, 1.0):
            raise ConfigurationError(f"correlation matrix not Hermitian ({herm_err:.3e})")
        eig_min = np.linalg.eigvalsh(R)[..., 0]
        if np.any(eig_min < -psd_tol * self.beta):
            raise ConfigurationError("correlation matrix not PSD")
        tr = np.real(np.trace(R, axis1=-2, axis2=-1)) / M
        rel = np.abs(tr - self.beta) / self.beta
        if np.any(rel > trace_tol):
            raise ConfigurationError("trace(R)/M does not match beta")


def pathloss_db(distance_m, shadow_db=0.0):
    """3GPP-style large-scale fading in dB, distance in meters."""
    distance_m = np.asarray(distance_m, dtype=float)
    if np.any(distance_m <= 0):
        raise ValueError("distance must be positive")
    out = -148.1 - 37.6 * np.log10(distance_m / 1000.0) + shadow_db
    return float(out) if np.ndim(out) == 0 else out


def exp_correlation(M: int, varsigma: float, theta: float, beta: float) -> np.ndarray:
    """Exponential correlation model of a uniform linear array.

    Entry ``(m, n)`` is ``beta * (varsigma * exp(1j*theta))**(m - n)`` for
    ``m >= n`` and the complex conjugate otherwise.
    """
    if not 0.0 <= varsigma <= 1.0:
        raise ValueError(f"varsigma must lie in [0, 1], got {varsigma}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    idx = np.arange(M)
    diff = idx[:, None] - idx[None, :]
    lag = np.abs(diff)
    # 0**0 == 1 keeps the diagonal at beta when varsigma == 0
    mag = np.power(float(varsigma), lag)
    phase = np.exp(1j * theta * diff)
    return beta * mag * phase


def _exp_correlation_batch(M, varsigma, theta, beta):
    idx = np.arange(M)
    diff = idx[:, None] - idx[None, :]
    mag = np.power(float(varsigma), np.abs(diff))
    phase = np.exp(1j * theta[..., None, None] * diff)
    return beta[..., None, None] * mag * phase


def effective_noise_mw(noise_dbm: float, noise_figure_db: float) -> float:
    """Noise variance in mW with the noise figure added in dB."""
    return 10.0 ** ((noise_dbm + noise_figure_db) / 10.0)


def grid_shape(L: int) -> tuple[int, int]:
    """Rows x columns of the torus holding L square cells (as square as possible)."""
    rows = max(r for r in range(1, int(math.isqrt(L)) + 1) if L % r == 0)
    return rows, L // rows


def wrapped_displacement(a, b, extent):
    """Shortest displacement ``b - a`` on a torus of the given (x, y) extent."""
    extent = np.asarray(extent, dtype=float)
    delta = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    return delta - extent * np.round(delta / extent)


def _rng(config: NetworkConfig, drop_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, drop_index, 0]))


def generate_scenario(config: NetworkConfig, drop_index: int = 0) -> Scenario:
    """Drop K users uniformly in each of the L square cells and build all links.

    Deterministic in ``(config, drop_index)``.
    """
    config.validate()
    L, K, M = config.L, config.K, config.M
    edge = config.cell_edge_m
    if config.min_dist_m >= edge / 2 * math.sqrt(2):
        raise ConfigurationError("min_dist_m leaves no admissible area in the cell")
    rng = _rng(config, drop_index)

    rows, cols = grid_shape(L)
    extent = np.array([cols * edge, rows * edge])
    cell = np.arange(L)
    bs_pos = np.stack([(cell % cols + 0.5) * edge, (cell // cols + 0.5) * edge], axis=-1)

    user_pos = np.empty((L, K, 2))
    for l in range(L):
        for k in range(K):
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                offset = rng.uniform(-edge / 2, edge / 2, size=2)
                if np.hypot(*offset) >= config.min_dist_m:
                    break
            else:
                raise ConfigurationError(
                    f"could not place user {k} in cell {l} after "
                    f"{MAX_PLACEMENT_ATTEMPTS} attempts")
            user_pos[l, k] = bs_pos[l] + offset

    # displacement from BS j to user (l, k)
    disp = wrapped_displacement(bs_pos[None, None, :, :], user_pos[:, :, None, :], extent)
    distance = np.hypot(disp[..., 0], disp[..., 1])
    distance = np.maximum(distance, config.min_dist_m)
    theta = np.arctan2(disp[..., 1], disp[..., 0])

    shadow = rng.normal(0.0, config.shadow_std_db, size=(L, K, L))
    beta = 10.0 ** (pathloss_db(distance, shadow) / 10.0)
    R = _exp_correlation_batch(M, config.varsigma, theta, beta)

    sigma2 = effective_noise_mw(config.noise_dbm, config.noise_figure_db)
    return Scenario(
        config=config,
        drop_index=drop_index,
        bs_pos=bs_pos,
        user_pos=user_pos,
        distance=distance,
        theta=theta,
        beta=beta,
        R=R,
        sigma2=sigma2,
        pilot_power=np.full((L, K), config.pilot_power_mw),
        p_max=np.full((L, K), config.p_max_mw),
    )
