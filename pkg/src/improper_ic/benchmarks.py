"""Comparison schemes: PS-PC, Minsum/Minmax-MSE, MinIL-IA and MaxSINR-IA.

Every scheme returns a :class:`SchemeOutput` holding precoders, per-user
receiver matrices and the detector the simulator should apply:

``identity-euclidean``
    nearest ``|h_kk| A_k d`` to the rotated received signal (PS-PC).
``whitened-euclidean``
    nearest ``|h_kk| R_k^T A_k d`` with ``R_k = W_k^{-1/2}`` (Minmax-PEP/SER).
``mse-euclidean``
    nearest ``d`` to ``R_k^T y`` (MSE schemes; the receiver already equalizes).
``beamformed-1d``
    scalar ``u_k^T y`` divided by the effective gain, sliced to the nearest
    PAM level (IA schemes).

IA schemes send one real stream per user: ``A_k = sqrt(P_k/2) v_k e_1^T``
with unit ``v_k``, fed by a PAM alphabet embedded as ``(s, 0)``.  PAM levels
have mean square 2, so the transmit power equals ``P_k``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization
from .constellation import Constellation, difference_matrix
from .convex import SubproblemPs1, solve_ps1
from .errors import ConfigurationError, SolverError
from .metrics import PrecoderSet, interference_covariances, qfunc, sym_inv_sqrt

log = logging.getLogger(__name__)

DETECTORS = ("whitened-euclidean", "identity-euclidean", "mse-euclidean", "beamformed-1d")
SCHEMES = ("ps-pc", "minsum-mse", "minmax-mse", "minil-ia", "maxsinr-ia", "minmax-pep", "minmax-ser")
PSPC_EXHAUSTIVE_MAX_K = 3


@dataclass
class BenchConfig:
    grid_points: int = 50
    mse_max_iterations: int = 200
    mse_tol: float = 1e-9
    ia_max_iterations: int = 500
    ia_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.grid_points < 1:
            raise ConfigurationError("grid_points must be at least 1")
        if self.mse_tol <= 0 or self.ia_tol <= 0:
            raise ConfigurationError("tolerances must be positive")


@dataclass
class SchemeOutput:
    precoders: PrecoderSet
    receivers: np.ndarray  # (K, 2, 2)
    scheme: str
    detector: str
    history: list = field(default_factory=list)
    converged: bool = True
    degraded: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        self.receivers = np.asarray(self.receivers, dtype=float).reshape(-1, 2, 2)

    @property
    def K(self) -> int:
        return self.precoders.K


# --------------------------------------------------------------------------- PS-PC


def _pspc_ser(ch, constellations, powers):
    """Max-over-users union-bound SER for proper signalling at ``powers`` (..., K)."""
    p = np.asarray(powers, dtype=float)
    mag2 = ch.magnitudes**2
    cross = mag2 * (1.0 - np.eye(ch.K))
    w = ch.noise_powers / 2.0 + 0.5 * p @ cross.T  # (..., K) scalar interference-plus-noise
    ser = []
    for k, c in enumerate(constellations):
        dist = np.linalg.norm(difference_matrix(c).rows, axis=1)
        snr = mag2[k, k] * p[..., k] / 2.0 / w[..., k]
        args = 0.5 * np.sqrt(snr)[..., None] * dist
        ser.append(qfunc(args).mean(axis=-1))
    return np.max(np.stack(ser, -1), axis=-1)


def ps_pc(ch: ChannelRealization, constellations, grid_points: int = 50) -> SchemeOutput:
    """Proper signalling with grid-searched power control.

    Powers ``p_k = P_k i / G`` for ``i = 1..G``; exhaustive for ``K <= 3``,
    cyclic coordinate descent from full power otherwise.
    """
    if grid_points < 1:
        raise ConfigurationError("grid_points must be at least 1")
    K = ch.K
    levels = np.arange(1, grid_points + 1) / grid_points
    budgets = ch.power_budgets
    if K <= PSPC_EXHAUSTIVE_MAX_K:
        grid = np.array(list(itertools.product(levels, repeat=K))) * budgets
        vals = _pspc_ser(ch, constellations, grid)
        # ties resolved toward the highest powers (product order puts them last)
        best = grid[len(vals) - 1 - int(np.argmin(vals[::-1]))]
    else:
        best = budgets.copy()
        cur = float(_pspc_ser(ch, constellations, best))
        for _ in range(100):
            changed = False
            for k in range(K):
                cand = np.repeat(best[None, :], grid_points, axis=0)
                cand[:, k] = levels * budgets[k]
                vals = _pspc_ser(ch, constellations, cand)
                j = len(vals) - 1 - int(np.argmin(vals[::-1]))
                if vals[j] < cur - 1e-15:
                    best, cur, changed = cand[j], float(vals[j]), True
            if not changed:
                break
    prec = PrecoderSet(np.sqrt(best / 2.0)[:, None, None] * np.eye(2))
    value = float(_pspc_ser(ch, constellations, best))
    return SchemeOutput(prec, np.broadcast_to(np.eye(2), (K, 2, 2)), "ps-pc", "identity-euclidean",
                        history=[value], info={"powers": best, "union_bound_ser": value})


# --------------------------------------------------------------------------- MSE


def mse_matrix(ch: ChannelRealization, p, receivers, k: int) -> np.ndarray:
    """``E_k = E[(r_k - d_k)(r_k - d_k)^T]`` for unit-covariance symbols."""
    a = np.asarray(p, dtype=float).reshape(-1, 2, 2)
    r = np.asarray(receivers, dtype=float).reshape(-1, 2, 2)[k]
    h = ch.magnitudes[k, k]
    total = interference_covariances(ch, a)[k] + h**2 * a[k] @ a[k].T
    cross = h * r.T @ a[k]
    return r.T @ total @ r - cross - cross.T + np.eye(2)


def mmse_receivers(ch: ChannelRealization, p) -> np.ndarray:
    """Linear MMSE receivers ``(W_k + |h_kk|^2 A_k A_k^T)^{-1} |h_kk| A_k``."""
    a = np.asarray(p, dtype=float).reshape(-1, 2, 2)
    h = np.diag(ch.magnitudes)
    total = interference_covariances(ch, a) + h[:, None, None] ** 2 * a @ np.swapaxes(a, 1, 2)
    return np.linalg.solve(total, h[:, None, None] * a)


def _sum_mse(ch, a, r):
    return float(sum(np.trace(mse_matrix(ch, a, r, k)) for k in range(ch.K)))


def _max_stream_mse(ch, a, r):
    return float(max(np.max(np.diag(mse_matrix(ch, a, r, k))) for k in range(ch.K)))


def _sum_mse_precoders(ch, r):
    """Exact minimizer of the sum-MSE over the precoders for fixed receivers.

    Separable per transmitter: ``A_l = (M_l + nu I)^{-1} |h_ll| R_l`` with
    ``M_l = sum_k |h_kl|^2 J(phi_kl)^T R_k R_k^T J(phi_kl)`` and ``nu >= 0``
    set by bisection so that the power budget holds.
    """
    K = ch.K
    rot = ch.cross_rotations()
    out = np.zeros((K, 2, 2))
    for l in range(K):
        m = np.zeros((2, 2))
        for k in range(K):
            jr = rot[k, l].T @ r[k]
            m += ch.magnitudes[k, l] ** 2 * jr @ jr.T
        rhs = ch.magnitudes[l, l] * r[l]
        budget = ch.power_budgets[l]

        def sol(nu):
            return np.linalg.solve(m + nu * np.eye(2), rhs)

        def power(nu):
            x = sol(nu)
            return float(np.sum(x * x))

        eig_min = float(np.linalg.eigvalsh(m)[0])
        if eig_min > 1e-12 * max(1.0, np.trace(m)) and power(0.0) <= budget:
            out[l] = sol(0.0)
            continue
        lo, hi = 0.0, max(1.0, np.linalg.norm(rhs) / np.sqrt(budget))
        while power(hi) > budget:
            hi *= 2.0
        # bisection on nu until the budget is met to double precision
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if power(mid) > budget:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(1.0, hi):
                break
        out[l] = sol(hi)
    return out


def _minmax_mse_precoders(ch, r, a_prev):
    """Epigraph step ``min max_{k,i} [E_k]_{ii}`` for fixed receivers.

    Column ``i`` of ``R_k`` plays the role of ``b`` and ``e_i`` that of the
    difference row in the convex precoder kernel, with the desired-signal
    energy included in each row.
    """
    rows = [np.eye(2)] * ch.K
    sp = SubproblemPs1(ch, [r[k] for k in range(ch.K)], rows, own_term=True)
    return solve_ps1(sp, a_prev).precoders.matrices


def _mse_design(ch, cfg, objective, precoder_step, label):
    a = PrecoderSet.proper(ch.power_budgets).matrices
    r = mmse_receivers(ch, a)
    value = objective(ch, a, r)
    history = [value]
    converged = degraded = False
    for _ in range(cfg.mse_max_iterations):
        try:
            a_new = precoder_step(ch, r, a)
        except SolverError as exc:
            log.warning("%s precoder step failed: %s", label, exc)
            degraded = True
            break
        r_new = mmse_receivers(ch, a_new)
        new_value = objective(ch, a_new, r_new)
        if new_value > value:
            # inner-solve noise: keep the previous pair
            a_new, r_new, new_value = a, r, value
        change = float(np.max(np.linalg.norm(a_new - a, axis=(1, 2))))
        a, r = a_new, r_new
        history.append(new_value)
        done = value - new_value <= cfg.mse_tol * max(1.0, abs(value)) and change <= np.sqrt(cfg.mse_tol)
        value = new_value
        if done:
            converged = True
            break
    return SchemeOutput(PrecoderSet(a), r, label, "mse-euclidean", history, converged, degraded)


def minsum_mse(ch: ChannelRealization, cfg: BenchConfig | None = None) -> SchemeOutput:
    """Alternate MMSE receivers and the closed-form sum-MSE precoders."""
    cfg = cfg or BenchConfig()
    return _mse_design(ch, cfg, _sum_mse, lambda c, r, a: _sum_mse_precoders(c, r), "minsum-mse")


def minmax_mse(ch: ChannelRealization, cfg: BenchConfig | None = None) -> SchemeOutput:
    """Alternate MMSE receivers and the convex max-per-stream-MSE precoder step.

    The MMSE receiver minimizes ``E_k`` in the positive semidefinite order, so
    it also minimizes every diagonal entry and the alternation is monotone.
    """
    cfg = cfg or BenchConfig()
    return _mse_design(ch, cfg, _max_stream_mse, _minmax_mse_precoders, "minmax-mse")


# --------------------------------------------------------------------------- IA


def _least_eigvec(m):
    return np.linalg.eigh(m)[1][:, 0]


def _unit(x):
    n = np.linalg.norm(x)
    return x / n if n > 0 else np.array([1.0, 0.0])


def _ia_cross_gains(ch):
    """``|h_kl|^2 P_l`` for ``l != k``: received interference power per unit beam."""
    return ch.magnitudes**2 * ch.power_budgets[None, :] * (1.0 - np.eye(ch.K))


def ia_leakage(ch: ChannelRealization, v, u) -> float:
    """Total leakage ``sum_k sum_{l != k} |h_kl|^2 P_l (u_k^T J(phi_kl) v_l)^2``."""
    rot = ch.cross_rotations()
    proj = np.einsum("ki,klij,lj->kl", u, rot, v)
    return float(np.sum(_ia_cross_gains(ch) * proj**2))


def _interf_cov(ch, v, k, gains, rot):
    m = np.zeros((2, 2))
    for l in range(ch.K):
        if l != k:
            jv = rot[k, l] @ v[l]
            m += gains[k, l] * np.outer(jv, jv)
    return m


def _reverse_cov(ch, u, l, gains, rot):
    m = np.zeros((2, 2))
    for k in range(ch.K):
        if k != l:
            ju = rot[k, l].T @ u[k]
            m += gains[k, l] * np.outer(ju, ju)
    return m


def _ia_init(ch, cfg):
    rng = np.random.default_rng(cfg.seed)
    v = rng.standard_normal((ch.K, 2))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _ia_output(ch, v, u, label, history, converged):
    e1 = np.array([1.0, 0.0])
    a = np.sqrt(ch.power_budgets / 2.0)[:, None, None] * np.einsum("ki,j->kij", v, e1)
    r = np.einsum("ki,j->kij", u, e1)
    info = {"v": v, "u": u, "leakage": ia_leakage(ch, v, u), "sinr": ia_sinr(ch, v, u)}
    return SchemeOutput(PrecoderSet(a), r, label, "beamformed-1d", history, converged, info=info)


def ia_sinr(ch: ChannelRealization, v, u) -> np.ndarray:
    """Post-beamforming SINR per user for unit beams and transmit power ``P_k``."""
    rot = ch.cross_rotations()
    gains = _ia_cross_gains(ch)
    out = np.zeros(ch.K)
    for k in range(ch.K):
        sig = ch.magnitudes[k, k] ** 2 * ch.power_budgets[k] * float(u[k] @ v[k]) ** 2
        noise = float(u[k] @ (_interf_cov(ch, v, k, gains, rot) + ch.noise_powers[k] / 2.0 * np.eye(2)) @ u[k])
        out[k] = sig / noise
    return out


def min_il_ia(ch: ChannelRealization, cfg: BenchConfig | None = None) -> SchemeOutput:
    """Interference leakage minimization by alternating least eigenvectors."""
    cfg = cfg or BenchConfig()
    rot = ch.cross_rotations()
    gains = _ia_cross_gains(ch)
    v = _ia_init(ch, cfg)
    u = np.array([_least_eigvec(_interf_cov(ch, v, k, gains, rot)) for k in range(ch.K)])
    leak = ia_leakage(ch, v, u)
    history = [leak]
    converged = False
    for _ in range(cfg.ia_max_iterations):
        v = np.array([_least_eigvec(_reverse_cov(ch, u, l, gains, rot)) for l in range(ch.K)])
        u = np.array([_least_eigvec(_interf_cov(ch, v, k, gains, rot)) for k in range(ch.K)])
        new = ia_leakage(ch, v, u)
        history.append(new)
        done = abs(leak - new) <= cfg.ia_tol * max(1.0, float(np.sum(ch.power_budgets)))
        leak = new
        if done:
            converged = True
            break
    # resolve the sign ambiguity so the desired gain is positive
    sign = np.sign(np.einsum("ki,ki->k", u, v))
    u = u * np.where(sign == 0, 1.0, sign)[:, None]
    return _ia_output(ch, v, u, "minil-ia", history, converged)


def max_sinr_ia(ch: ChannelRealization, cfg: BenchConfig | None = None) -> SchemeOutput:
    """Forward/reverse MaxSINR iteration with normalized MMSE beamformers."""
    cfg = cfg or BenchConfig()
    rot = ch.cross_rotations()
    gains = _ia_cross_gains(ch)
    # reciprocal network: receiver k transmits back with power P_k
    rgains = ch.magnitudes**2 * ch.power_budgets[:, None] * (1.0 - np.eye(ch.K))
    eye = np.eye(2)
    v = _ia_init(ch, cfg)

    def forward(v):
        return np.array(
            [
                _unit(np.linalg.solve(_interf_cov(ch, v, k, gains, rot) + ch.noise_powers[k] / 2.0 * eye, v[k]))
                for k in range(ch.K)
            ]
        )

    def reverse(u):
        return np.array(
            [
                _unit(np.linalg.solve(_reverse_cov(ch, u, l, rgains, rot) + ch.noise_powers[l] / 2.0 * eye, u[l]))
                for l in range(ch.K)
            ]
        )

    u = forward(v)
    history = [float(np.min(ia_sinr(ch, v, u)))]
    converged = False
    for _ in range(cfg.ia_max_iterations):
        v_new = reverse(u)
        u_new = forward(v_new)
        delta = max(float(np.max(np.abs(v_new - v))), float(np.max(np.abs(u_new - u))))
        v, u = v_new, u_new
        history.append(float(np.min(ia_sinr(ch, v, u))))
        if delta <= np.sqrt(cfg.ia_tol):
            converged = True
            break
    return _ia_output(ch, v, u, "maxsinr-ia", history, converged)


# --------------------------------------------------------------------------- dispatch


def whitening_receivers(ch: ChannelRealization, p) -> np.ndarray:
    """``R_k = W_k^{-1/2}`` in the caller's units."""
    return sym_inv_sqrt(interference_covariances(ch, p))


def design(scheme: str, ch: ChannelRealization, constellations, bench: BenchConfig | None = None, algo=None):
    """Run the scheme named by its CLI label and return a :class:`SchemeOutput`."""
    from .algorithms import minmax_pep, minmax_ser

    bench = bench or BenchConfig()
    if scheme == "ps-pc":
        return ps_pc(ch, constellations, bench.grid_points)
    if scheme == "minsum-mse":
        return minsum_mse(ch, bench)
    if scheme == "minmax-mse":
        return minmax_mse(ch, bench)
    if scheme == "minil-ia":
        return min_il_ia(ch, bench)
    if scheme == "maxsinr-ia":
        return max_sinr_ia(ch, bench)
    if scheme in ("minmax-pep", "minmax-ser"):
        run = minmax_pep if scheme == "minmax-pep" else minmax_ser
        res = run(ch, constellations, algo)
        return SchemeOutput(
            res.precoders,
            whitening_receivers(ch, res.precoders),
            scheme,
            "whitened-euclidean",
            res.history,
            res.converged,
            res.degraded,
            info={"objective": res.objective},
        )
    raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
