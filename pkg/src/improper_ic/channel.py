"""K-user SISO interference channel realizations.

A realization stores magnitudes ``|h_kl|`` and phases ``theta_kl`` (receiver
``k``, transmitter ``l``) together with per-receiver noise powers and
per-transmitter power budgets.  The real-valued view multiplies a 2-vector by
``|h_kl| J(theta_kl)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError

# Cellular parameters (LTE-like macro cell).
CELL_RADIUS_M = 1000.0
PATHLOSS_EXPONENT = 3.7
BANDWIDTH_HZ = 10e6
NOISE_PSD_DBM_HZ = -174.0
TX_POWER_RANGE_DBM = (7.0, 57.0)

# Fixed AWGN channels used for the two- and three-user experiments.
TWO_USER_CHANNEL = np.array(
    [
        [1.9310 * np.exp(-2.0228j), 0.7732 * np.exp(0.5865j)],
        [0.9249 * np.exp(3.0213j), 2.3742 * np.exp(0.2089j)],
    ]
)
THREE_USER_CHANNEL = np.array(
    [
        [1.9310 * np.exp(-2.0228j), 0.7732 * np.exp(0.5865j), 0.9766 * np.exp(1.1907j)],
        [0.9249 * np.exp(3.0213j), 2.3742 * np.exp(0.2089j), 0.3009 * np.exp(-1.5307j)],
        [1.7628 * np.exp(-0.4282j), 0.3127 * np.exp(-1.4959j), 2.1935 * np.exp(1.7364j)],
    ]
)


def rotation(theta: float) -> np.ndarray:
    """2x2 rotation matrix ``[[cos, -sin], [sin, cos]]``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotations(theta) -> np.ndarray:
    """Vectorized :func:`rotation`; output shape ``theta.shape + (2, 2)``."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


@dataclass(frozen=True)
class ChannelRealization:
    """One channel draw plus the noise/power context it is used in."""

    magnitudes: np.ndarray
    phases: np.ndarray
    noise_powers: np.ndarray
    power_budgets: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mag = np.array(self.magnitudes, dtype=float)
        ph = np.array(self.phases, dtype=float)
        if mag.ndim != 2 or mag.shape[0] != mag.shape[1] or ph.shape != mag.shape:
            raise ConfigurationError("channel magnitudes/phases must be square K x K arrays")
        k = mag.shape[0]
        noise = np.broadcast_to(np.asarray(self.noise_powers, dtype=float), (k,)).copy()
        power = np.broadcast_to(np.asarray(self.power_budgets, dtype=float), (k,)).copy()
        if np.any(mag < 0) or not np.all(np.isfinite(mag)):
            raise ConfigurationError("channel magnitudes must be finite and non-negative")
        if np.any(noise <= 0) or np.any(power <= 0):
            raise ConfigurationError("noise powers and power budgets must be positive")
        for arr in (mag, ph, noise, power):
            arr.setflags(write=False)
        object.__setattr__(self, "magnitudes", mag)
        object.__setattr__(self, "phases", ph)
        object.__setattr__(self, "noise_powers", noise)
        object.__setattr__(self, "power_budgets", power)

    @property
    def K(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def snr(self) -> np.ndarray:
        """Per-user ``P_k / sigma_k^2`` (linear)."""
        return self.power_budgets / self.noise_powers

    def complex_matrix(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phases)

    def relative_phases(self) -> np.ndarray:
        """``phi_kl = theta_kl - theta_kk`` for every pair (zero on the diagonal)."""
        return self.phases - np.diag(self.phases)[:, None]

    def cross_rotations(self) -> np.ndarray:
        """``J(phi_kl)`` stacked as shape (K, K, 2, 2)."""
        return rotations(self.relative_phases())

    def with_snr(self, snr_db) -> "ChannelRealization":
        """Copy with noise powers set so that ``P_k / sigma_k^2`` equals ``snr_db``."""
        snr = 10.0 ** (np.broadcast_to(np.asarray(snr_db, dtype=float), (self.K,)) / 10.0)
        return replace(self, noise_powers=self.power_budgets / snr)

    def normalized(self) -> "ChannelRealization":
        """Equivalent realization with unit noise powers and unit budgets.

        Receiver ``k`` is divided by ``sigma_k`` and transmitter ``l``'s
        precoder by ``sqrt(P_l)``, so ``|h_kl|`` becomes
        ``|h_kl| sqrt(P_l) / sigma_k``.  Precoders designed for the normalized
        channel map back via ``A_l = sqrt(P_l) * A_l_normalized``.
        """
        scale = np.sqrt(self.power_budgets)[None, :] / np.sqrt(self.noise_powers)[:, None]
        return ChannelRealization(
            self.magnitudes * scale,
            self.phases,
            np.ones(self.K),
            np.ones(self.K),
            dict(self.meta),
        )


def relative_phase(ch: ChannelRealization, k: int, l: int) -> float:
    """``theta_kl - theta_kk``; defined for cross links only."""
    if k == l:
        raise ValueError("relative phase is defined for k != l")
    return float(ch.phases[k, l] - ch.phases[k, k])


def fixed_channel(matrix, noise_powers=1.0, power_budgets=1.0) -> ChannelRealization:
    """Build a realization from a square complex matrix ``H[k, l] = h_kl``."""
    h = np.asarray(matrix, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ConfigurationError(f"channel matrix must be square, got shape {h.shape}")
    return ChannelRealization(np.abs(h), np.angle(h), noise_powers, power_budgets)


def _cn01(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def rayleigh_channel(K: int, rng: np.random.Generator, noise_powers=1.0, power_budgets=1.0, fading=None):
    """i.i.d. CN(0, 1) coefficients for every link (or the given ``fading`` draw)."""
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    g = _cn01(rng, (K, K)) if fading is None else np.asarray(fading, dtype=complex)
    return fixed_channel(g, noise_powers, power_budgets)


# Importance-sampling proposal for direct-link fading power |g_kk|^2: the
# mixture IS_EXP_WEIGHT * Exp(1) + (1 - IS_EXP_WEIGHT) * LogUniform[IS_LOW, IS_HIGH].
# Deep fades drive the average SER at high SNR; the log-uniform part samples
# them at every scale while the Exp(1) part keeps the support (and hence
# unbiasedness) intact.  Weights are bounded by 1 / IS_EXP_WEIGHT.
IS_EXP_WEIGHT = 0.25
IS_LOW = 1e-6
IS_HIGH = 10.0
FADING_METHODS = ("plain", "importance")


def _is_density(gamma):
    inside = (gamma >= IS_LOW) & (gamma <= IS_HIGH)
    lu = np.where(inside, 1.0 / (np.maximum(gamma, IS_LOW) * np.log(IS_HIGH / IS_LOW)), 0.0)
    return IS_EXP_WEIGHT * np.exp(-gamma) + (1.0 - IS_EXP_WEIGHT) * lu


def _is_cdf(gamma):
    lu = np.clip(np.log(np.maximum(gamma, 1e-300) / IS_LOW) / np.log(IS_HIGH / IS_LOW), 0.0, 1.0)
    return IS_EXP_WEIGHT * -np.expm1(-gamma) + (1.0 - IS_EXP_WEIGHT) * lu


def _is_inverse(u):
    """Inverse CDF of the proposal by bisection on ``log gamma`` (monotone in ``u``)."""
    lo = np.full(np.shape(u), -80.0)
    hi = np.full(np.shape(u), np.log(80.0))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        above = _is_cdf(np.exp(mid)) > u
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return np.exp(0.5 * (lo + hi))


@dataclass(frozen=True)
class FadingDraws:
    """``R`` small-scale fading matrices with importance weights.

    ``mean(weights * X)`` is an unbiased estimate of ``E[X]`` under i.i.d.
    CN(0, 1) fading for any function ``X`` of the draw.
    """

    gains: np.ndarray  # (R, K, K) complex
    weights: np.ndarray  # (R,)
    method: str


def draw_fading(K: int, R: int, rng: np.random.Generator, method: str = "plain") -> FadingDraws:
    """Draw ``R`` fading matrices.

    ``"importance"`` samples each direct-link power from the mixture proposal,
    stratified across the ``R`` draws (an independent random permutation of
    the strata per user), with uniform phases; cross links stay plain.
    """
    if method not in FADING_METHODS:
        raise ConfigurationError(f"fading method must be one of {FADING_METHODS}, got {method!r}")
    g = _cn01(rng, (R, K, K))
    w = np.ones(R)
    if method == "importance":
        for k in range(K):
            u = (rng.permutation(R) + rng.random(R)) / R
            gamma = _is_inverse(u)
            phase = rng.uniform(-np.pi, np.pi, R)
            g[:, k, k] = np.sqrt(gamma) * np.exp(1j * phase)
            w *= np.exp(-gamma) / _is_density(gamma)
    return FadingDraws(g, w, method)


def path_loss_db(distance_m, exponent=PATHLOSS_EXPONENT):
    """``10 log10(d^-mu)`` with ``d`` in meters."""
    return -10.0 * exponent * np.log10(np.asarray(distance_m, dtype=float))


def noise_power_dbm(bandwidth_hz=BANDWIDTH_HZ, psd_dbm_hz=NOISE_PSD_DBM_HZ):
    return psd_dbm_hz + 10.0 * np.log10(bandwidth_hz)


def cell_geometry(geometry: str, radius_m=CELL_RADIUS_M, edge_fraction=1.0):
    """Base-station and user positions; returns ``(bs_xy, user_xy)``.

    Two cells: stations ``2R`` apart on the x axis.  Three cells: stations on
    an equilateral triangle of side ``2R``.  User ``k`` sits at distance
    ``edge_fraction * R`` from its own station, heading toward the other
    station (two cells) or the triangle centroid (three cells).
    """
    r = radius_m
    if geometry == "two_cell":
        bs = np.array([[0.0, 0.0], [2 * r, 0.0]])
        target = bs[::-1]
    elif geometry == "three_cell":
        bs = 2 * r * np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        target = np.broadcast_to(bs.mean(axis=0), bs.shape)
    else:
        raise ConfigurationError(f"unknown cellular geometry {geometry!r}")
    heading = target - bs
    heading = heading / np.linalg.norm(heading, axis=1, keepdims=True)
    users = bs + edge_fraction * r * heading
    return bs, users


def cellular_channel(
    geometry: str,
    tx_power_dbm: float,
    rng: np.random.Generator,
    radius_m=CELL_RADIUS_M,
    exponent=PATHLOSS_EXPONENT,
    edge_fraction=1.0,
    fading=None,
) -> ChannelRealization:
    """Cell-edge users with path loss and Rayleigh small-scale fading.

    ``|h_kl|^2 = d_kl^-mu |g_kl|^2`` where ``d_kl`` is the distance from
    station ``l`` to user ``k``.  Powers are kept in mW.  ``fading`` supplies
    the ``g`` matrix (e.g. from :func:`draw_fading`) instead of drawing it.
    """
    lo, hi = TX_POWER_RANGE_DBM
    if not lo <= tx_power_dbm <= hi:
        raise ConfigurationError(f"tx_power_dbm must lie in [{lo}, {hi}], got {tx_power_dbm}")
    bs, users = cell_geometry(geometry, radius_m, edge_fraction)
    dist = np.linalg.norm(users[:, None, :] - bs[None, :, :], axis=-1)
    gain = 10.0 ** (path_loss_db(dist, exponent) / 10.0)
    g = _cn01(rng, dist.shape) if fading is None else np.asarray(fading, dtype=complex)
    h = np.sqrt(gain) * g
    k = dist.shape[0]
    noise_mw = 10.0 ** (noise_power_dbm() / 10.0)
    power_mw = 10.0 ** (tx_power_dbm / 10.0)
    ch = fixed_channel(h, np.full(k, noise_mw), np.full(k, power_mw))
    mean_snr_db = tx_power_dbm + path_loss_db(np.diag(dist), exponent) - noise_power_dbm()
    ch.meta.update(
        geometry=geometry,
        tx_power_dbm=float(tx_power_dbm),
        mean_direct_snr_db=float(np.mean(mean_snr_db)),
    )
    return ch
