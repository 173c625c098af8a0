"""Link-level Monte Carlo SER and PEP simulation.

Signals are simulated in each receiver's rotated frame, i.e. after
multiplying by ``J(theta_kk)^T``; the noise is circular so its law does not
change.  Receiver ``k`` then sees

    y_k = |h_kk| A_k d_k + sum_{l != k} |h_kl| J(phi_kl) A_l d_l + n_k,

with ``n_k ~ N(0, sigma_k^2/2 I)``, and the scheme's detector decides on
``z_k = R_k^T y_k``.  Decisions are nearest-template with ties broken toward
the lowest symbol index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .benchmarks import SchemeOutput
from .channel import ChannelRealization
from .constellation import Constellation, difference_matrix, pam_equivalent
from .metrics import interference_covariances, pep_arguments, qfunc, sym_inv_sqrt

log = logging.getLogger(__name__)

CHUNK = 1 << 15
INTERFERENCE_MODES = ("constellation", "gaussian")


@dataclass
class SimResult:
    per_user_ser: np.ndarray
    max_ser: float
    symbols_simulated: int
    error_counts: np.ndarray
    realization_id: int = 0
    scheme: str = ""


def effective_constellations(out: SchemeOutput, constellations) -> list:
    """Alphabets actually transmitted: PAM equivalents for 1-D (IA) schemes."""
    if out.detector == "beamformed-1d":
        return [pam_equivalent(c) for c in constellations]
    return list(constellations)


def _templates(ch, out, k, c):
    """Noise-free detector templates ``T`` with ``z = R^T y`` compared to rows of ``T``."""
    if out.detector == "mse-euclidean":
        return c.symbols
    # For IA, R = u e_1^T and A = sqrt(P/2) v e_1^T, so both z and the templates
    # live on the first axis and this reduces to scalar PAM slicing.
    g = ch.magnitudes[k, k] * out.receivers[k].T @ out.precoders.matrices[k]
    return c.symbols @ g.T


def _decide(z, t):
    # argmin ||z - t_m||^2 = argmin (|t_m|^2 - 2 z.t_m); argmin returns the first index on ties
    score = np.sum(t * t, axis=1)[None, :] - 2.0 * z @ t.T
    return np.argmin(score, axis=1)


def _received(ch, a, k, own, others, rng, n):
    """Rotated received signal at receiver ``k`` for given transmitted vectors."""
    rot = ch.cross_rotations()
    y = ch.magnitudes[k, k] * own @ a[k].T
    for l, d in others.items():
        y += ch.magnitudes[k, l] * d @ (rot[k, l] @ a[l]).T
    y += rng.standard_normal((n, 2)) * np.sqrt(ch.noise_powers[k] / 2.0)
    return y


def simulate_ser(
    ch: ChannelRealization,
    out: SchemeOutput,
    constellations,
    n_symbols: int,
    rng: np.random.Generator,
    interference: str = "constellation",
    realization_id: int = 0,
    chunk: int = CHUNK,
) -> SimResult:
    """Count symbol errors of every user over ``n_symbols`` independent slots.

    Each slot draws independent uniform symbols for all users.  With
    ``interference="gaussian"`` the interfering vectors are ``N(0, I)``
    instead (independently per receiver).
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be at least 1")
    if interference not in INTERFERENCE_MODES:
        raise ValueError(f"interference must be one of {INTERFERENCE_MODES}")
    if len(constellations) != ch.K:
        raise ValueError(f"need one constellation per user ({ch.K})")
    K = ch.K
    cons = effective_constellations(out, constellations)
    a = out.precoders.matrices
    templates = [_templates(ch, out, k, cons[k]) for k in range(K)]
    errors = np.zeros(K, dtype=np.int64)
    done = 0
    while done < n_symbols:
        n = min(chunk, n_symbols - done)
        idx = np.stack([rng.integers(0, c.order, n) for c in cons], axis=1)
        sent = [cons[l].symbols[idx[:, l]] for l in range(K)]
        for k in range(K):
            if interference == "gaussian":
                others = {l: rng.standard_normal((n, 2)) for l in range(K) if l != k}
            else:
                others = {l: sent[l] for l in range(K) if l != k}
            y = _received(ch, a, k, sent[k], others, rng, n)
            z = y @ out.receivers[k]
            errors[k] += int(np.count_nonzero(_decide(z, templates[k]) != idx[:, k]))
        done += n
    ser = errors / n_symbols
    return SimResult(ser, float(np.max(ser)), n_symbols, errors, realization_id, out.scheme)


# --------------------------------------------------------------------------- PEP mode


@dataclass
class PepResult:
    """Simulated and analytical PEPs of one user.

    ``mean_*`` average over all ordered symbol pairs; ``worst_*`` is the
    largest single pair.  ``std_error`` is a conservative binomial standard
    error of ``mean_sim`` based on the number of slots.
    """

    mean_sim: float
    mean_analytic: float
    worst_sim: float
    worst_analytic: float
    pair_counts: np.ndarray  # (M, M) pairwise-error counts, row = sent symbol
    sent_counts: np.ndarray  # (M,)
    n_symbols: int
    std_error: float


def simulate_pep(
    ch: ChannelRealization,
    precoders,
    constellation: Constellation,
    k: int,
    n_symbols: int,
    rng: np.random.Generator,
    interference: str = "gaussian",
    interferer_constellations=None,
    chunk: int = CHUNK,
) -> PepResult:
    """Empirical pairwise error probabilities under whitened-Euclidean detection.

    For every slot user ``k`` sends a uniform symbol ``d``; for each other
    symbol ``d'`` the pairwise event ``||z - t(d')|| < ||z - t(d)||`` is
    counted.  With Gaussian interferers the analytical PEP is exact, so the
    two estimates must agree to within sampling error.
    """
    if interference not in INTERFERENCE_MODES:
        raise ValueError(f"interference must be one of {INTERFERENCE_MODES}")
    a = np.asarray(precoders, dtype=float).reshape(-1, 2, 2)
    K = ch.K
    r = sym_inv_sqrt(interference_covariances(ch, a)[k])
    g = ch.magnitudes[k, k] * r.T @ a[k]
    c = constellation
    t = c.symbols @ g.T
    M = c.order
    pair = np.zeros((M, M), dtype=np.int64)
    sent_counts = np.zeros(M, dtype=np.int64)
    done = 0
    while done < n_symbols:
        n = min(chunk, n_symbols - done)
        idx = rng.integers(0, M, n)
        others = {}
        for l in range(K):
            if l == k:
                continue
            if interference == "gaussian":
                others[l] = rng.standard_normal((n, 2))
            else:
                cl = interferer_constellations[l]
                others[l] = cl.symbols[rng.integers(0, cl.order, n)]
        y = _received(ch, a, k, c.symbols[idx], others, rng, n)
        z = y @ r
        dist = np.sum((z[:, None, :] - t[None, :, :]) ** 2, axis=2)
        own = dist[np.arange(n), idx]
        wins = dist < own[:, None]  # never true for the sent symbol itself
        np.add.at(pair, idx, wins.astype(np.int64))
        sent_counts += np.bincount(idx, minlength=M)
        done += n
    with np.errstate(invalid="ignore", divide="ignore"):
        pep_matrix = pair / sent_counts[:, None]
    off = ~np.eye(M, dtype=bool)
    valid = sent_counts > 0
    mean_sim = float(pair.sum() / (n_symbols * (M - 1)))
    worst_sim = float(np.max(pep_matrix[valid][:, :][off[valid]], initial=0.0))
    q_args = pep_arguments(ch, a, k, difference_matrix(c))
    peps = qfunc(q_args)
    se = float(np.sqrt(max(mean_sim * (1.0 - mean_sim), 0.0) / n_symbols))
    return PepResult(mean_sim, float(np.mean(peps)), worst_sim, float(np.max(peps)), pair, sent_counts, n_symbols, se)


# --------------------------------------------------------------------------- intervals


def wilson_interval(p_hat, n, z: float = 1.959963984540054):
    """Wilson score interval for a proportion ``p_hat`` from ``n`` trials.

    ``n`` may be fractional (an effective sample size).
    """
    p_hat = np.asarray(p_hat, dtype=float)
    n = np.asarray(n, dtype=float)
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2.0 * n)) / denom
    half = z * np.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n)) / denom
    # the score interval is exact at the boundaries; avoid round-off residue there
    lo = np.where(p_hat <= 0.0, 0.0, np.clip(center - half, 0.0, 1.0))
    hi = np.where(p_hat >= 1.0, 1.0, np.clip(center + half, 0.0, 1.0))
    return lo, hi


def weighted_mean_interval(values, weights, n_symbols, level: float = 0.95):
    """Mean of ``weights * values`` over realizations with a Wilson-type interval.

    ``values`` are per-realization SER estimates, each from ``n_symbols``
    slots.  The interval is the Wilson interval at the effective sample size
    ``p (1 - p) / se^2`` where ``se`` is the larger of the empirical standard
    error across realizations and the pure binomial one; with a single
    realization this is the ordinary Wilson interval on the symbol count.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    R = len(values)
    x = weights * values
    mean = float(np.mean(x))
    p = min(max(mean, 0.0), 1.0)
    binom_var = p * (1.0 - p) / (R * n_symbols)
    emp_var = float(np.var(x, ddof=1) / R) if R > 1 else 0.0
    var = max(binom_var, emp_var)
    z = float(norm.ppf(0.5 + level / 2.0))
    if var <= 0.0 or p in (0.0, 1.0):
        n_eff = R * n_symbols
    else:
        n_eff = p * (1.0 - p) / var
    lo, hi = wilson_interval(p, n_eff, z)
    return mean, float(lo), float(hi)


# --------------------------------------------------------------------------- sweeps

SER_COLUMNS = (
    "snr_db", "grid_value", "scheme", "mean_max_ser", "ci_low", "ci_high", "per_user_ser",
    "n_realizations", "n_symbols", "n_failed", "failed", "config_hash",
)
PEP_COLUMNS = (
    "snr_db", "snr2_db", "interference", "mean_pep_sim", "ci_low", "ci_high", "mean_pep_analytic",
    "worst_pep_sim", "worst_pep_analytic", "n_realizations", "n_symbols", "config_hash",
)

# stream tags for SeedSequence spawn keys
_FADING, _SYMBOLS, _PRECODERS = 0, 1, 2


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _fading(spec):
    from .channel import draw_fading

    if spec.is_fixed:
        return None
    return draw_fading(spec.K, spec.n_realizations, _stream(spec.seed, _FADING), spec.fading_sampling)


def build_channel(spec, value: float, r: int, fading=None) -> ChannelRealization:
    """Channel of realization ``r`` at grid point ``value`` (dB or dBm)."""
    from .channel import (
        CELL_RADIUS_M, THREE_USER_CHANNEL, TWO_USER_CHANNEL, cellular_channel, fixed_channel,
        noise_power_dbm, path_loss_db, rayleigh_channel,
    )

    if spec.scenario == "fixed-awgn-2user":
        return fixed_channel(TWO_USER_CHANNEL).with_snr(value)
    if spec.scenario == "fixed-awgn-3user":
        return fixed_channel(THREE_USER_CHANNEL).with_snr(value)
    g = fading.gains[r]
    if spec.scenario == "rayleigh":
        return rayleigh_channel(spec.K, None, fading=g).with_snr(value)
    geometry = "two_cell" if spec.scenario == "cellular-2cell" else "three_cell"
    power = value
    if spec.grid_unit == "snr_db":
        power = value - float(path_loss_db(CELL_RADIUS_M)) + float(noise_power_dbm())
    return cellular_channel(geometry, power, None, fading=g)


def _point_snr(spec, ch, value):
    return float(ch.meta.get("mean_direct_snr_db", value)) if spec.is_cellular else float(value)


def _ser_task(spec, p, r, fading):
    """Design and simulate every scheme on one (grid point, realization)."""
    from .benchmarks import design
    from .constellation import build_constellation

    cons = [build_constellation(m) for m in spec.modulations]
    value = spec.grid[p]
    ch = build_channel(spec, value, r, fading)
    algo, bench = spec.algo_config(), spec.bench_config()
    out = {}
    for s, scheme in enumerate(spec.schemes):
        try:
            so = design(scheme, ch, cons, bench, algo)
            res = simulate_ser(
                ch, so, cons, spec.n_symbols, _stream(spec.seed, _SYMBOLS, p, r, s), spec.interference, r
            )
            out[scheme] = res.per_user_ser
        except Exception as exc:  # recorded as a failed row; the sweep goes on
            log.warning("scheme %s failed at point %s realization %d: %s", scheme, value, r, exc)
            out[scheme] = None
    log.info("grid point %g realization %d done", value, r)
    return p, r, _point_snr(spec, ch, value), out


def _pep_task(spec, p, q, r, fading):
    from .constellation import build_constellation

    cons = [build_constellation(m) for m in spec.modulations]
    base = build_channel(spec, spec.grid[p], r, fading)
    ch = base.with_snr([spec.grid[p], spec.snr2_db[q]])
    rng = _stream(spec.seed, _PRECODERS, r)
    a = rng.standard_normal((spec.K, 2, 2))
    a *= np.sqrt(ch.power_budgets / np.einsum("kij,kij->k", a, a))[:, None, None]
    res = simulate_pep(
        ch, a, cons[0], 0, spec.n_symbols, _stream(spec.seed, _SYMBOLS, p, q, r), spec.interference, cons
    )
    return p, q, r, res


def _map(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(*t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def sweep(spec, jobs: int = 1) -> list:
    """Run every grid point, realization and scheme of ``spec``; return CSV rows.

    Fading draws and symbol streams come from ``SeedSequence(seed)`` with a
    spawn key per (point, realization, scheme), so results do not depend on
    ``jobs`` or on task completion order.  Rows are sorted by grid index then
    scheme order.
    """
    fading = _fading(spec)
    R = spec.n_realizations
    h = spec.config_hash()
    weights = np.ones(R) if fading is None else fading.weights
    if spec.mode == "pep":
        return _pep_rows(spec, fading, weights, jobs, h)
    tasks = [(spec, p, r, fading) for p in range(len(spec.grid)) for r in range(R)]
    results = _map(_ser_task, tasks, jobs)
    results.sort(key=lambda t: (t[0], t[1]))
    rows = []
    for p in range(len(spec.grid)):
        point = [t for t in results if t[0] == p]
        snr_vals = [t[2] for t in point]
        for scheme in spec.schemes:
            sers = [t[3][scheme] for t in point]
            n_failed = sum(x is None for x in sers)
            row = {
                "snr_db": float(np.mean(snr_vals)),
                "grid_value": float(spec.grid[p]),
                "scheme": scheme,
                "n_realizations": R,
                "n_symbols": spec.n_symbols,
                "n_failed": n_failed,
                "failed": int(n_failed > 0),
                "config_hash": h,
            }
            if n_failed:
                row.update(mean_max_ser=np.nan, ci_low=np.nan, ci_high=np.nan, per_user_ser="")
            else:
                per = np.array(sers)  # (R, K)
                means = np.mean(weights[:, None] * per, axis=0)
                kmax = int(np.argmax(means))
                m, lo, hi = weighted_mean_interval(per[:, kmax], weights, spec.n_symbols)
                row.update(
                    mean_max_ser=float(means[kmax]), ci_low=lo, ci_high=hi,
                    per_user_ser=";".join(_fmt(x) for x in means),
                )
            rows.append(row)
    return rows


def _pep_rows(spec, fading, weights, jobs, h):
    R = spec.n_realizations
    tasks = [
        (spec, p, q, r, fading) for p in range(len(spec.grid)) for q in range(len(spec.snr2_db)) for r in range(R)
    ]
    results = _map(_pep_task, tasks, jobs)
    rows = []
    for p in range(len(spec.grid)):
        for q in range(len(spec.snr2_db)):
            res = [t[3] for t in sorted(results, key=lambda t: t[2]) if t[0] == p and t[1] == q]
            w = weights
            sim = np.array([x.mean_sim for x in res])
            m, lo, hi = weighted_mean_interval(sim, w, spec.n_symbols)
            rows.append(
                {
                    "snr_db": float(spec.grid[p]),
                    "snr2_db": float(spec.snr2_db[q]),
                    "interference": spec.interference,
                    "mean_pep_sim": m,
                    "ci_low": lo,
                    "ci_high": hi,
                    "mean_pep_analytic": float(np.mean(w * np.array([x.mean_analytic for x in res]))),
                    "worst_pep_sim": float(np.mean(w * np.array([x.worst_sim for x in res]))),
                    "worst_pep_analytic": float(np.mean(w * np.array([x.worst_analytic for x in res]))),
                    "n_realizations": R,
                    "n_symbols": spec.n_symbols,
                    "config_hash": h,
                }
            )
    return rows


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, rows, columns=None):
    """Write rows with a fixed column order and round-trip float formatting."""
    import csv

    if columns is None:
        columns = PEP_COLUMNS if rows and "mean_pep_sim" in rows[0] else SER_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
