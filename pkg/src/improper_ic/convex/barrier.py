"""Dense log-barrier interior-point method for small smooth convex programs.

Solves ``min c^T x  s.t.  f_i(x) <= 0`` where the ``f_i`` are convex and
twice differentiable.  Each barrier stage minimizes

    F_mu(x) = c^T x - mu * sum_i log(-f_i(x))

by damped Newton steps with Armijo backtracking, then ``mu`` is divided by
``mu_factor``.  At the end of a stage ``lambda_i = mu / -f_i(x)`` are the
central-path dual estimates, so complementarity equals ``mu`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from ..errors import SolverError

MU0 = 1.0
MU_MIN = 1e-12
MU_FACTOR = 10.0
MAX_NEWTON = 200
ARMIJO = 0.25
BACKTRACK = 0.5
NEWTON_TOL = 1e-14
GRAD_TOL = 1e-11
MAX_POLISH = 20
ACTIVE_TOL = 1e-6


class ConvexProgram:
    """Interface consumed by :func:`barrier_solve`.

    Subclasses set ``c`` (linear objective, shape ``(n,)``) and implement the
    three constraint callbacks.  ``hessian(x, w)`` returns
    ``sum_i w_i * grad^2 f_i(x)`` so that no per-constraint Hessian stack is
    ever materialized by the solver.
    """

    c: np.ndarray

    def constraints(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass
class BarrierResult:
    x: np.ndarray
    lam: np.ndarray
    mu: float
    newton_steps: int
    trace: list = field(default_factory=list)  # (stage, step, objective, merit, decrement)


def kkt_components(prob: ConvexProgram, x, lam) -> dict:
    """Stationarity, primal/dual feasibility and complementarity (inf-norms)."""
    f = prob.constraints(x)
    jac = prob.jacobian(x)
    return {
        "stationarity": float(np.max(np.abs(prob.c + jac.T @ lam), initial=0.0)),
        "primal": float(max(0.0, np.max(f, initial=-np.inf))),
        "dual": float(max(0.0, -np.min(lam, initial=np.inf))),
        "complementarity": float(np.max(np.abs(lam * f), initial=0.0)),
    }


def _merit(prob, x, mu):
    f = prob.constraints(x)
    if not (f.max() < 0.0):  # also rejects NaN
        return np.inf, f
    return float(prob.c @ x - mu * np.log(-f).sum()), f


def _newton_direction(h, g):
    try:
        return np.linalg.solve(h, -g)
    except np.linalg.LinAlgError:
        reg = 1e-14 * max(1.0, float(np.max(np.abs(np.diag(h)))))
        return np.linalg.lstsq(h + reg * np.eye(len(g)), -g, rcond=None)[0]


def center(
    prob: ConvexProgram,
    x,
    mu,
    max_steps=MAX_NEWTON,
    tol=NEWTON_TOL,
    gtol=GRAD_TOL,
    stage=0,
    trace=None,
    stop=None,
):
    """Minimize ``F_mu`` from a strictly feasible ``x``; returns ``(x, steps, stopped)``.

    Stops once the Newton decrement is negligible *and* the gradient of
    ``F_mu`` (which equals the Lagrangian stationarity residual for the
    central-path duals) is below ``gtol``, or when no step makes progress.
    """
    merit, f = _merit(prob, x, mu)
    if not np.isfinite(merit):
        raise SolverError("centering started from an infeasible point", x=x)
    polish = 0  # Newton steps taken after the decrement test passed
    best_g = np.inf
    for step in range(max_steps):
        if stop is not None and stop(x):
            return x, step, True
        jac = prob.jacobian(x)
        inv = 1.0 / -f
        g = prob.c + mu * (jac.T @ inv)
        with np.errstate(over="ignore", invalid="ignore"):
            # slacks near underflow overflow the Hessian; caught by the decrement test below
            h = mu * ((jac.T * inv**2) @ jac + prob.hessian(x, inv))
        dx = _newton_direction(h, g)
        slope = float(g @ dx)
        decrement = -slope
        gnorm = float(np.max(np.abs(g)))
        if trace is not None:
            trace.append((stage, step, float(prob.c @ x), merit, decrement))
        if not np.isfinite(decrement) or gnorm <= gtol:
            return x, step, False
        if decrement / 2.0 <= tol * max(1.0, abs(merit)):
            # centered in the merit sense; keep polishing the gradient while it improves
            if gnorm >= best_g or polish >= MAX_POLISH:
                return x, step, False
            polish += 1
        best_g = min(best_g, gnorm)
        s = 1.0
        while True:
            x_new = x + s * dx
            m_new, f_new = _merit(prob, x_new, mu)
            if m_new <= merit + ARMIJO * s * slope:
                break
            s *= BACKTRACK
            if s < 1e-16:
                # no representable decrease left: treat as centered
                return x, step, False
        if not m_new < merit:
            # Armijo passed only within rounding: the merit is at its noise floor
            return x, step, False
        x, merit, f = x_new, m_new, f_new
    raise SolverError(
        f"Newton centering did not converge in {max_steps} steps (mu={mu:g})",
        x=x,
        residuals={"decrement": decrement, "mu": mu},
    )


def barrier_solve(
    prob: ConvexProgram,
    x0,
    mu0=MU0,
    mu_min=MU_MIN,
    mu_factor=MU_FACTOR,
    max_newton=MAX_NEWTON,
    stop=None,
    record=False,
) -> BarrierResult:
    """Run the barrier schedule ``mu0, mu0/factor, ...`` down to ``mu_min``."""
    x = np.array(x0, dtype=float)
    trace = [] if record else None
    mu = mu0
    total = 0
    stage = 0
    while True:
        x, steps, stopped = center(prob, x, mu, max_newton, stage=stage, trace=trace, stop=stop)
        total += steps
        if stopped or mu <= mu_min * (1 + 1e-12):
            break
        mu /= mu_factor
        stage += 1
    lam = refine_duals(prob, x, mu / -prob.constraints(x))
    return BarrierResult(x, lam, mu, total, trace or [])


def refine_duals(prob: ConvexProgram, x, lam, active_tol=ACTIVE_TOL):
    """Least-squares polish of the multipliers of nearly active constraints.

    The central-path estimates ``mu / -f`` leave a stationarity residual of
    the order of the Newton accuracy in stiff directions.  Re-fitting the
    active multipliers by non-negative least squares removes most of it; the
    refit is kept only if the overall KKT residual improves.
    """
    f = prob.constraints(x)
    active = -f <= active_tol
    if not np.any(active):
        return lam
    jac = prob.jacobian(x)
    rhs = -(prob.c + jac[~active].T @ lam[~active])
    fit, _ = nnls(jac[active].T, rhs)
    cand = lam.copy()
    cand[active] = fit
    if max(kkt_components(prob, x, cand).values()) < max(kkt_components(prob, x, lam).values()):
        return cand
    return lam


class _PhaseOne(ConvexProgram):
    """``min s  s.t.  f_i(x) - s <= 0`` over ``(x, s)``.

    A ball ``|x - x0|^2 <= radius^2`` keeps the problem bounded: without it
    directions that only relax constraints (an epigraph variable growing
    without limit, say) let the barrier term decrease forever.
    """

    def __init__(self, prob, x0, radius):
        self.prob = prob
        self.x0 = np.asarray(x0, dtype=float)
        self.r2 = float(radius) ** 2
        n = len(prob.c)
        self.c = np.zeros(n + 1)
        self.c[-1] = 1.0

    def constraints(self, z):
        x = z[:-1]
        ball = (np.sum((x - self.x0) ** 2) - self.r2) / self.r2
        return np.append(self.prob.constraints(x) - z[-1], ball)

    def jacobian(self, z):
        x = z[:-1]
        jac = self.prob.jacobian(x)
        jb = np.append(2.0 * (x - self.x0) / self.r2, 0.0)
        return np.vstack([np.hstack([jac, -np.ones((jac.shape[0], 1))]), jb])

    def hessian(self, z, w):
        n = len(z) - 1
        h = np.zeros((n + 1, n + 1))
        h[:n, :n] = self.prob.hessian(z[:-1], w[:-1]) + (2.0 * w[-1] / self.r2) * np.eye(n)
        return h


def find_interior(prob: ConvexProgram, x0, margin=1e-9, radius=None):
    """Return a strictly feasible point near ``x0`` or raise :class:`SolverError`.

    The search is confined to a ball around ``x0`` of the given ``radius``
    (default ``10 * (1 + |x0|)``).
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = prob.constraints(x0)
    if np.all(f0 < 0):
        return x0
    if radius is None:
        radius = 10.0 * (1.0 + float(np.linalg.norm(x0)))
    z0 = np.append(x0, np.max(f0) + 1.0)
    ph = _PhaseOne(prob, x0, radius)
    res = barrier_solve(ph, z0, stop=lambda z: z[-1] < -margin and np.all(prob.constraints(z[:-1]) < 0))
    x = res.x[:-1]
    if not np.all(prob.constraints(x) < 0):
        raise SolverError("no strictly feasible point found", x=x, residuals={"phase1": float(res.x[-1])})
    return x
