"""Alternating Minmax-PEP and Minmax-SER precoder designs.

Each outer iteration refreshes the auxiliary matrices ``B_k`` in closed form
for the current precoders and then re-solves the convex precoder step with
``B_k`` held fixed.  Both half-steps can only lower the min-max objective, so
the recorded history is non-increasing.

The drivers work on :meth:`ChannelRealization.normalized` (unit noise, unit
budgets) and map the precoders back to the caller's units at the end.

Proper signalling ``A_k = sqrt(P_k/2) I`` is a stationary point of both
alternations, so starting there alone never produces improper designs.  The
drivers therefore run from several starting points (proper first, then the
MaxSINR interference-alignment beamformers, then seeded near-rank-1 full-power
precoders) and keep the run with the lowest final objective.
Every individual run is monotone; the returned history is that of the winner.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .channel import ChannelRealization
from .constellation import Constellation, difference_matrix, reduce_difference_matrix
from .convex import SubproblemPs1, SubproblemPs2, solve_ps1, solve_ps2
from .errors import SolverError
from .metrics import PrecoderSet, interference_covariance, pep_arguments, qfunc

log = logging.getLogger(__name__)

VARIANTS = ("pep", "ser")
IMPROVE_TOL = 1e-12
TIE_TOL = 1e-6  # multi-start objectives closer than this count as equal
RANK_ONE_MIX = 0.05


@dataclass
class AlgoConfig:
    max_outer_iterations: int = 100
    convergence_tol: float = 1e-5
    variant: str = "pep"
    n_starts: int = 6
    start_seed: int = 0
    ia_start: bool = True

    def __post_init__(self):
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class AlternatingState:
    precoders: PrecoderSet
    auxiliaries: list
    objective_history: list = field(default_factory=list)
    iteration: int = 0


@dataclass(frozen=True)
class RunSummary:
    """Outcome of one alternating run (one starting point)."""

    objective: float
    iterations: int
    converged: bool
    degraded: bool
    history: list


@dataclass
class DesignResult:
    """Outcome of a Minmax-PEP / Minmax-SER run (precoders in caller units)."""

    precoders: PrecoderSet
    objective: float
    history: list
    iterations: int
    converged: bool
    degraded: bool = False
    auxiliaries: list = field(default_factory=list, repr=False)
    runs: list = field(default_factory=list, repr=False)
    key: float = field(default=np.inf, repr=False)

    def __iter__(self):
        return iter((self.precoders, self.objective, self.history))

    @property
    def start_objectives(self) -> list:
        return [r.objective for r in self.runs]


def closed_form_b(ch: ChannelRealization, p, rows, k: int) -> np.ndarray:
    """Optimal ``B_k`` (shape 2 x D) for fixed precoders.

    Column ``i`` is ``|h_kk| W_k^{-1} A_k r_i`` with ``r_i`` the ``i``-th
    difference row, i.e. ``B_k^T = |h_kk| Rows A_k^T W_k^{-1}``.
    """
    rows = np.asarray(getattr(rows, "rows", rows), dtype=float).reshape(-1, 2)
    a = np.asarray(p, dtype=float).reshape(-1, 2, 2)[k]
    w = interference_covariance(ch, p, k)
    return ch.magnitudes[k, k] * np.linalg.solve(w, a @ rows.T)


def g_matrix(ch: ChannelRealization, p, B, rows, k: int) -> np.ndarray:
    """``G_k`` (or ``S_k`` with full rows) for arbitrary ``B_k``.

    ``B_k^T W_k B_k - |h_kk| B_k^T A_k R^T - |h_kk| R A_k^T B_k`` where ``W_k``
    is the interference-plus-noise covariance; its diagonal holds the
    per-row constraint values of the precoder subproblem.
    """
    rows = np.asarray(getattr(rows, "rows", rows), dtype=float).reshape(-1, 2)
    a = np.asarray(p, dtype=float).reshape(-1, 2, 2)[k]
    b = np.asarray(B, dtype=float)
    w = interference_covariance(ch, p, k)
    cross = ch.magnitudes[k, k] * b.T @ a @ rows.T
    return b.T @ w @ b - cross - cross.T


def _rows_for(constellations, variant):
    rows = []
    for c in constellations:
        f = difference_matrix(c)
        rows.append(reduce_difference_matrix(f) if variant == "pep" else f)
    return rows


def _objective(ch, p, rows, variant):
    """True metric and a underflow-free comparison key (lower is better)."""
    args = [pep_arguments(ch, p, k, r) for k, r in enumerate(rows)]
    if variant == "pep":
        worst = min(float(np.min(x)) for x in args)
        return float(qfunc(worst)), -worst
    logs = [float(logsumexp(log_ndtr(-x)) - np.log(len(x))) for x in args]
    return float(max(np.exp(v) for v in logs)), max(logs)


def _alternate(ch: ChannelRealization, constellations, cfg: AlgoConfig, init=None) -> DesignResult:
    """One monotone alternating run from ``init`` (caller units; proper if None)."""
    if len(constellations) != ch.K:
        raise ValueError(f"need one constellation per user ({ch.K}), got {len(constellations)}")
    chn = ch.normalized()
    rows = _rows_for(constellations, cfg.variant)
    scale = np.sqrt(ch.power_budgets)
    if init is None:
        a = PrecoderSet.proper(np.ones(ch.K))
    else:
        a = PrecoderSet(np.asarray(init, dtype=float) / scale[:, None, None])
    value, key = _objective(chn, a, rows, cfg.variant)
    history = [value]
    b_prev = None
    converged = degraded = False
    it = 0
    solve = solve_ps1 if cfg.variant == "pep" else solve_ps2
    make = SubproblemPs1 if cfg.variant == "pep" else SubproblemPs2
    for it in range(1, cfg.max_outer_iterations + 1):
        B = [closed_form_b(chn, a, rows[k], k) for k in range(ch.K)]
        sp = make(chn, B, rows)
        try:
            sol = solve(sp, a)
        except SolverError as exc:
            # warm start failed: retry once from proper signalling
            log.info("inner solve failed from warm start at outer iteration %d: %s", it, exc)
            try:
                sol = solve(sp, PrecoderSet.proper(np.ones(ch.K)))
            except SolverError as exc2:
                log.warning("inner solve failed at outer iteration %d: %s", it, exc2)
                degraded = True
                break
        a_new = sol.precoders
        new_value, new_key = _objective(chn, a_new, rows, cfg.variant)
        if new_key >= key - IMPROVE_TOL * max(1.0, abs(key)):
            # no strict improvement (ties or inner-solve noise): keep the previous
            # block so non-binding users do not drift along flat directions
            a_new, new_value, new_key = a, value, key
        da = float(np.max(np.linalg.norm(a_new.matrices - a.matrices, axis=(1, 2))))
        db = np.inf
        if b_prev is not None:
            db = max(
                float(np.linalg.norm(bn - bo) / max(np.linalg.norm(bo), 1e-300)) for bn, bo in zip(B, b_prev)
            )
        a, value, key, b_prev = a_new, new_value, new_key, B
        history.append(value)
        log.debug("outer iteration %d: objective %.12g, dA %.3g, dB %.3g", it, value, da, db)
        if da <= cfg.convergence_tol and db <= cfg.convergence_tol:
            converged = True
            break
    out = PrecoderSet(a.matrices * scale[:, None, None])
    aux = [closed_form_b(chn, a, rows[k], k) for k in range(ch.K)]
    res = DesignResult(out, history[-1], history, it, converged, degraded, aux, key=key)
    res.runs = [RunSummary(res.objective, it, converged, degraded, history)]
    return res


def random_starts(ch: ChannelRealization, n: int, seed: int = 0, rank_one=True) -> list:
    """``n`` seeded random precoder sets at full power (caller units).

    With ``rank_one`` each ``A_k`` is a random outer product ``u v^T`` plus a
    small identity component; such starts reach the (typically rank-1)
    high-SNR optima far more reliably than full-rank Gaussian draws.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        if rank_one:
            u = rng.standard_normal((ch.K, 2))
            v = rng.standard_normal((ch.K, 2))
            a = np.einsum("ki,kj->kij", u, v)
            a /= np.linalg.norm(a, axis=(1, 2))[:, None, None]
            a += RANK_ONE_MIX * np.eye(2)
        else:
            a = rng.standard_normal((ch.K, 2, 2))
        a *= np.sqrt(ch.power_budgets / np.einsum("kij,kij->k", a, a))[:, None, None]
        out.append(a)
    return out


def _best_of(ch, constellations, cfg, starts) -> DesignResult:
    best = None
    runs = []
    for init in starts:
        res = _alternate(ch, constellations, cfg, init)
        runs.extend(res.runs)
        # lowest objective wins; within TIE_TOL a converged run beats one stopped
        # by the iteration cap, otherwise the earlier start (proper first) stays
        margin = TIE_TOL * max(1.0, abs(best.key)) if best is not None else 0.0
        if best is None or res.key < best.key - margin:
            best = res
        elif res.key <= best.key + margin and res.converged and not best.converged:
            best = res
    best.runs = runs
    return best


def ia_start(ch: ChannelRealization) -> np.ndarray:
    """Full-power start built from the MaxSINR alignment beamformers.

    The rank-1 beamformers get a small identity component so that the start
    is not exactly rank deficient.
    """
    from .benchmarks import max_sinr_ia

    a = np.asarray(max_sinr_ia(ch).precoders, dtype=float)
    a = a / np.linalg.norm(a, axis=(1, 2))[:, None, None] + RANK_ONE_MIX * np.eye(2)
    return a * np.sqrt(ch.power_budgets / np.einsum("kij,kij->k", a, a))[:, None, None]


def default_starts(ch: ChannelRealization, cfg: AlgoConfig) -> list:
    """Proper signalling, the alignment start (if enabled), then seeded near-rank-1 starts."""
    starts = [None]
    if cfg.ia_start and cfg.n_starts > 1:
        starts.append(ia_start(ch))
    return starts + random_starts(ch, cfg.n_starts - len(starts), cfg.start_seed)


def minmax_pep(ch: ChannelRealization, constellations, cfg: AlgoConfig | None = None, init=None) -> DesignResult:
    """Minimize the largest pairwise error probability over users and pairs.

    With ``init`` given a single run starts there; otherwise the best of
    :func:`default_starts` is returned.
    """
    cfg = _with_variant(cfg, "pep")
    starts = [init] if init is not None else default_starts(ch, cfg)
    return _best_of(ch, constellations, cfg, starts)


def minmax_ser(ch: ChannelRealization, constellations, cfg: AlgoConfig | None = None, init=None) -> DesignResult:
    """Minimize the largest union-bound SER over users.

    Without ``init`` the runs start from proper signalling and from the
    Minmax-PEP design, so the result never has a larger union-bound SER than
    the Minmax-PEP precoders.
    """
    cfg = _with_variant(cfg, "ser")
    if init is not None:
        return _best_of(ch, constellations, cfg, [init])
    pep = minmax_pep(ch, constellations, cfg)
    return _best_of(ch, constellations, cfg, [None, pep.precoders.matrices])


def _with_variant(cfg, variant):
    cfg = cfg or AlgoConfig()
    return replace(cfg, variant=variant)
