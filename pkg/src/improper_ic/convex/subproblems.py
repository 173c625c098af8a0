"""The two convex precoder subproblems of the alternating designs.

With the auxiliary matrices ``B_k`` fixed, every per-pair constraint of user
``k`` is a convex quadratic in the stacked precoder entries::

    (sigma_k^2/2)|b|^2 + sum_{l != k} |h_kl|^2 |A_l^T J(phi_kl)^T b|^2
        - 2 |h_kk| b^T A_k q                                      (*)

where ``b`` is a column of ``B_k`` and ``q`` the matching difference row.

``Ps1`` minimizes ``alpha`` subject to ``(*) <= alpha`` over the reduced rows.
``Ps2`` minimizes ``t`` subject to ``(*) <= -t_i^2``, ``t_i >= 0`` over the full
rows and ``mean_i Q(t_i / 2) <= t`` per user.  Both add ``Tr(A_k A_k^T) <= P_k``.

Precoder entries are flattened row-major: ``a_k = [A_11, A_12, A_21, A_22]``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..channel import ChannelRealization
from ..errors import SolverError
from ..metrics import PrecoderSet, qfunc
from .barrier import BarrierResult, ConvexProgram, barrier_solve, find_interior, kkt_components

log = logging.getLogger(__name__)

CONVEXITY_TOL = 1e-12
ZERO_ROW_TOL = 1e-12


@dataclass
class RowQuadratics:
    """Constraint rows ``a^T P_r a + g_r^T a + r_r`` over all 4K precoder entries."""

    P: np.ndarray  # (m, 4K, 4K)
    g: np.ndarray  # (m, 4K)
    r: np.ndarray  # (m,)
    user: np.ndarray  # (m,) owning user of each row

    def values(self, a):
        return np.einsum("i,mij,j->m", a, self.P, a) + self.g @ a + self.r

    def gradients(self, a):
        return 2.0 * np.einsum("mij,j->mi", self.P, a) + self.g

    def weighted_hessian(self, w):
        return 2.0 * np.einsum("m,mij->ij", w, self.P)


def build_rows(ch: ChannelRealization, B, rows, own_term=False) -> RowQuadratics:
    """Assemble ``(*)`` for every column of every ``B_k``.

    ``B[k]`` has shape (2, D_k) and ``rows[k]`` shape (D_k, 2).  With
    ``own_term`` the desired-signal energy ``|h_kk|^2 |A_k^T b|^2`` is added
    to each row, which turns ``(*) + 1`` into a per-stream MSE.
    """
    K = ch.K
    n = 4 * K
    rot = ch.cross_rotations()
    Ps, gs, rs, owner = [], [], [], []
    for k in range(K):
        bk = np.asarray(B[k], dtype=float).reshape(2, -1)
        qk = np.asarray(getattr(rows[k], "rows", rows[k]), dtype=float).reshape(-1, 2)
        if bk.shape[1] != qk.shape[0]:
            raise ValueError(f"B_{k} has {bk.shape[1]} columns but {qk.shape[0]} difference rows")
        d = qk.shape[0]
        P = np.zeros((d, n, n))
        for l in range(K):
            if (l == k and not own_term) or ch.magnitudes[k, l] == 0.0:
                continue
            v = np.einsum("ji,jd->di", rot[k, l], bk)  # J^T b per column
            gram = np.einsum("di,dj->dij", v, v)
            P[:, 4 * l : 4 * l + 4, 4 * l : 4 * l + 4] = ch.magnitudes[k, l] ** 2 * np.einsum(
                "dij,ab->diajb", gram, np.eye(2)
            ).reshape(d, 4, 4)
        g = np.zeros((d, n))
        g[:, 4 * k : 4 * k + 4] = -2.0 * ch.magnitudes[k, k] * np.einsum("id,dj->dij", bk, qk).reshape(d, 4)
        Ps.append(P)
        gs.append(g)
        rs.append(0.5 * ch.noise_powers[k] * np.sum(bk * bk, axis=0))
        owner.append(np.full(d, k))
    quad = RowQuadratics(np.concatenate(Ps), np.concatenate(gs), np.concatenate(rs), np.concatenate(owner))
    check_convexity(quad.P)
    return quad


def check_convexity(P, tol=CONVEXITY_TOL):
    """Raise if any assembled quadratic form has an eigenvalue below ``-tol`` (scaled)."""
    if P.size == 0:
        return
    eig = np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, -1, -2)))
    scale = np.maximum(1.0, np.max(np.abs(eig), axis=-1))
    if np.any(eig.min(axis=-1) < -tol * scale):
        raise ValueError("assembled constraint quadratic is not positive semidefinite")


def _power_parts(budgets, a):
    K = len(budgets)
    blocks = a.reshape(K, 4)
    f = (blocks * blocks).sum(axis=1) / budgets - 1.0
    jac = np.zeros((K, K, 4))
    idx = np.arange(K)
    jac[idx, idx] = 2.0 * blocks / budgets[:, None]
    return f, jac.reshape(K, 4 * K)


def _power_hessian(budgets, w):
    return np.diag(np.repeat(2.0 * w / budgets, 4))


def _phi(x):
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def _interior_start(precoders, budgets, shrink=1e-6):
    a = np.array(precoders, dtype=float).reshape(-1, 2, 2)
    pw = np.einsum("kij,kij->k", a, a)
    limit = budgets * (1.0 - shrink)
    fac = np.where(pw > limit, np.sqrt(limit / np.maximum(pw, 1e-300)), 1.0)
    return (a * fac[:, None, None]).reshape(-1)


# --------------------------------------------------------------------------- Ps1


@dataclass
class SubproblemPs1:
    """Min-max PEP precoder step (variables ``alpha`` and all ``A_k``)."""

    channel: ChannelRealization
    B: list
    rows: list
    own_term: bool = False
    quad: RowQuadratics = field(init=False, repr=False)

    def __post_init__(self):
        self.quad = build_rows(self.channel, self.B, self.rows, self.own_term)

    @property
    def K(self):
        return self.channel.K

    def lhs(self, precoders) -> np.ndarray:
        """Left-hand side of every ``(*) <= alpha`` row at ``precoders``."""
        return self.quad.values(np.asarray(precoders, dtype=float).reshape(-1))


class _Ps1Program(ConvexProgram):
    def __init__(self, sp: SubproblemPs1, scale):
        self.sp, self.scale = sp, scale
        self.budgets = sp.channel.power_budgets
        n = 1 + 4 * sp.K
        self.c = np.zeros(n)
        self.c[0] = 1.0 / scale

    def constraints(self, x):
        f_rows = (self.sp.quad.values(x[1:]) - x[0]) / self.scale
        f_pow, _ = _power_parts(self.budgets, x[1:])
        return np.concatenate([f_rows, f_pow])

    def jacobian(self, x):
        jr = self.sp.quad.gradients(x[1:]) / self.scale
        jr = np.hstack([-np.ones((jr.shape[0], 1)) / self.scale, jr])
        _, jp = _power_parts(self.budgets, x[1:])
        jp = np.hstack([np.zeros((jp.shape[0], 1)), jp])
        return np.vstack([jr, jp])

    def hessian(self, x, w):
        m = len(self.sp.quad.r)
        n = len(x)
        h = np.zeros((n, n))
        h[1:, 1:] = self.sp.quad.weighted_hessian(w[:m]) / self.scale + _power_hessian(self.budgets, w[m:])
        return h


@dataclass
class _Solution:
    x: np.ndarray  # solver variables (scaled formulation)
    lam: np.ndarray
    program: ConvexProgram = field(repr=False)
    result: BarrierResult = field(repr=False)

    @property
    def kkt(self) -> dict:
        return kkt_components(self.program, self.x, self.lam)

    @property
    def kkt_residual(self) -> float:
        return max(self.kkt.values())

    def with_precoders(self, precoders):
        """Copy whose precoder block is replaced (duals and other variables kept)."""
        a = np.asarray(precoders, dtype=float).reshape(-1)
        x = self.x.copy()
        x[len(x) - len(a) :] = a
        return replace(self, x=x, precoders=PrecoderSet(a.reshape(-1, 2, 2)))


@dataclass
class Ps1Solution(_Solution):
    precoders: PrecoderSet = None
    alpha: float = 0.0

    def __iter__(self):
        return iter((self.precoders, self.alpha))


def _ps1_scale(sp, a0):
    v = sp.quad.values(a0)
    scale = float(max(np.max(np.abs(v), initial=0.0), np.max(np.abs(sp.quad.r), initial=0.0)))
    return scale if scale > 0.0 else 1.0  # all rows vanish identically


def solve_ps1(sp: SubproblemPs1, warm_start, record=False) -> Ps1Solution:
    """Solve the min-max PEP precoder step from ``warm_start`` precoders."""
    budgets = sp.channel.power_budgets
    a0 = _interior_start(warm_start, budgets)
    scale = _ps1_scale(sp, a0)
    prog = _Ps1Program(sp, scale)
    v0 = sp.quad.values(a0)
    x0 = np.concatenate([[np.max(v0) + scale], a0])
    x0 = find_interior(prog, x0)
    res = barrier_solve(prog, x0, record=record)
    a = res.x[1:]
    alpha = float(np.max(sp.quad.values(a)))
    return Ps1Solution(res.x, res.lam, prog, res, PrecoderSet(a.reshape(-1, 2, 2)), alpha)


# --------------------------------------------------------------------------- Ps2


@dataclass
class SubproblemPs2:
    """Min-max SER precoder step (variables ``t``, ``t_{k,i}`` and all ``A_k``)."""

    channel: ChannelRealization
    B: list
    rows: list
    quad: RowQuadratics = field(init=False, repr=False)

    def __post_init__(self):
        self.quad = build_rows(self.channel, self.B, self.rows)
        counts = np.bincount(self.quad.user, minlength=self.channel.K)
        self.counts = counts
        # rows whose b column vanishes cannot carry any margin; their t_{k,i} is pinned to 0
        bnorm = np.concatenate([np.linalg.norm(np.asarray(b, dtype=float).reshape(2, -1), axis=0) for b in self.B])
        ref = max(float(np.max(bnorm, initial=0.0)), 1e-300)
        self.pinned = bnorm <= ZERO_ROW_TOL * ref
        self.free = np.flatnonzero(~self.pinned)

    @property
    def K(self):
        return self.channel.K

    def margins(self, precoders) -> np.ndarray:
        """``-(*)`` per row: the largest admissible ``t_{k,i}^2``."""
        return -self.quad.values(np.asarray(precoders, dtype=float).reshape(-1))

    def ser_values(self, t_rows) -> np.ndarray:
        """``(1/D_k) sum_i Q(t_{k,i}/2)`` per user."""
        q = qfunc(np.asarray(t_rows) / 2.0)
        return np.bincount(self.quad.user, weights=q, minlength=self.K) / self.counts


class _Ps2Program(ConvexProgram):
    """Variables ``x = [t, t_free..., a...]``; all rows scaled for conditioning."""

    def __init__(self, sp: SubproblemPs2, row_scale, ser_scale):
        self.sp = sp
        self.rs, self.ss = row_scale, ser_scale
        self.budgets = sp.channel.power_budgets
        self.nf = len(sp.free)
        self.na = 4 * sp.K
        self.c = np.zeros(1 + self.nf + self.na)
        self.c[0] = 1.0 / ser_scale
        self.user = sp.quad.user
        self.w_user = 1.0 / sp.counts[self.user]

    def _split(self, x):
        return x[0], x[1 : 1 + self.nf], x[1 + self.nf :]

    def _t_rows(self, tf):
        t = np.zeros(len(self.user))
        t[self.sp.free] = tf
        return t

    def constraints(self, x):
        t, tf, a = self._split(x)
        q = self.sp.quad
        f_rows = (q.values(a)[self.sp.free] + tf**2) / self.rs
        f_pos = -tf / np.sqrt(self.rs)
        f_ser = (self.sp.ser_values(self._t_rows(tf)) - t) / self.ss
        f_pow, _ = _power_parts(self.budgets, a)
        return np.concatenate([f_rows, f_pos, f_ser, f_pow])

    def jacobian(self, x):
        t, tf, a = self._split(x)
        nf, na, K = self.nf, self.na, self.sp.K
        n = len(x)
        free = self.sp.free
        jr = np.zeros((nf, n))
        jr[:, 1 + nf :] = self.sp.quad.gradients(a)[free] / self.rs
        jr[np.arange(nf), 1 + np.arange(nf)] = 2.0 * tf / self.rs
        jp = np.zeros((nf, n))
        jp[np.arange(nf), 1 + np.arange(nf)] = -1.0 / np.sqrt(self.rs)
        js = np.zeros((K, n))
        js[:, 0] = -1.0 / self.ss
        dq = -_phi(tf / 2.0) / 2.0 * self.w_user[free] / self.ss
        js[self.user[free], 1 + np.arange(nf)] = dq
        _, jw = _power_parts(self.budgets, a)
        jw = np.hstack([np.zeros((K, 1 + nf)), jw])
        return np.vstack([jr, jp, js, jw])

    def hessian(self, x, w):
        t, tf, a = self._split(x)
        nf, K = self.nf, self.sp.K
        n = len(x)
        free = self.sp.free
        w_rows, w_ser, w_pow = w[:nf], w[2 * nf : 2 * nf + K], w[2 * nf + K :]
        h = np.zeros((n, n))
        full_w = np.zeros(len(self.user))
        full_w[free] = w_rows
        h[1 + nf :, 1 + nf :] = self.sp.quad.weighted_hessian(full_w) / self.rs + _power_hessian(self.budgets, w_pow)
        # d^2/dt^2 Q(t/2) = (t/2) phi(t/2) / 4
        d2q = (tf / 2.0) * _phi(tf / 2.0) / 4.0 * self.w_user[free] / self.ss
        diag = 2.0 * w_rows / self.rs + w_ser[self.user[free]] * d2q
        idx = 1 + np.arange(nf)
        h[idx, idx] += diag
        return h


@dataclass
class Ps2Solution(_Solution):
    precoders: PrecoderSet = None
    t_rows: np.ndarray = None
    t: float = 0.0

    def __iter__(self):
        return iter((self.precoders, self.t_rows, self.t))


def solve_ps2(sp: SubproblemPs2, warm_start, record=False) -> Ps2Solution:
    """Solve the min-max SER precoder step from ``warm_start`` precoders."""
    budgets = sp.channel.power_budgets
    a0 = _interior_start(warm_start, budgets)
    marg = sp.margins(a0)
    row_scale = float(max(np.max(np.abs(marg), initial=0.0), np.max(np.abs(sp.quad.r), initial=0.0))) or 1.0
    free = sp.free
    tf0 = np.sqrt(np.maximum(marg[free], 0.0) / 2.0)
    tf0 = np.maximum(tf0, 1e-6 * np.sqrt(row_scale))
    t_rows0 = np.zeros(len(marg))
    t_rows0[free] = tf0
    ser0 = float(np.max(sp.ser_values(t_rows0)))
    ser_scale = max(ser0, 1e-300)
    prog = _Ps2Program(sp, row_scale, ser_scale)
    x0 = np.concatenate([[ser0 * 2.0], tf0, a0])
    x0 = find_interior(prog, x0)
    res = barrier_solve(prog, x0, record=record)
    t_free = res.x[1 : 1 + len(free)]
    if np.any(t_free < 0):
        log.warning("clipping %d negative t values to zero", int(np.sum(t_free < 0)))
        t_free = np.maximum(t_free, 0.0)
    a = res.x[1 + len(free) :]
    t_rows = np.zeros(len(sp.quad.r))
    t_rows[free] = t_free
    t = float(np.max(sp.ser_values(t_rows)))
    return Ps2Solution(res.x, res.lam, prog, res, PrecoderSet(a.reshape(-1, 2, 2)), t_rows, t)


# --------------------------------------------------------------------------- helpers


def kkt_residual(sp, point) -> float:
    """Largest KKT violation at ``point`` (a solution returned by a solve).

    Residuals are measured on the solver's scaled formulation: precoder rows
    divided by the row scale chosen at solve time, power rows by ``P_k``.
    """
    return max(kkt_components(point.program, point.x, point.lam).values())


def write_trace_csv(path, result: BarrierResult):
    """Dump ``(stage, step, objective, merit, decrement)`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "step", "objective", "merit", "newton_decrement"])
        w.writerows(result.trace)
