import csv

import numpy as np
import pytest

from improper_ic.algorithms import _rows_for, closed_form_b
from improper_ic.channel import ChannelRealization, rayleigh_channel
from improper_ic.constellation import build_constellation
from improper_ic.convex import (
    ConvexProgram,
    SubproblemPs1,
    SubproblemPs2,
    barrier_solve,
    find_interior,
    kkt_components,
    kkt_residual,
    solve_ps1,
    solve_ps2,
    write_trace_csv,
)
from improper_ic.convex.subproblems import check_convexity
from improper_ic.errors import SolverError
from improper_ic.metrics import PrecoderSet, qfunc
from improper_ic.verify import _golden_channel, load_goldens

GOLDENS = load_goldens()["instances"]


def _golden_problem(entry, which):
    ch = _golden_channel(entry)
    g = entry[which]
    cls = SubproblemPs1 if which == "ps1" else SubproblemPs2
    return ch, cls(ch, [np.array(b) for b in g["B"]], [np.array(r) for r in g["rows"]]), g["objective"]


def _instance(rng, labels, snr_db, variant):
    ch = rayleigh_channel(len(labels), rng).with_snr(snr_db)
    p = PrecoderSet(rng.standard_normal((ch.K, 2, 2)))
    p = p.scaled(np.sqrt(ch.power_budgets / p.powers()))
    rows = [r.rows for r in _rows_for([build_constellation(m) for m in labels], variant)]
    B = [closed_form_b(ch, p, rows[k], k) for k in range(ch.K)]
    return ch, p, B, rows


@pytest.mark.parametrize("entry", GOLDENS, ids=lambda e: f"instance{e['id']}")
def test_ps1_matches_reference_objective(entry):
    ch, sp, ref = _golden_problem(entry, "ps1")
    sol = solve_ps1(sp, PrecoderSet.proper(ch.power_budgets))
    assert sol.alpha == pytest.approx(ref, rel=1e-5)
    assert kkt_residual(sp, sol) <= 1e-8
    assert sol.precoders.is_feasible(ch.power_budgets)
    assert abs(sol.alpha - np.max(sp.lhs(sol.precoders))) <= 1e-7


@pytest.mark.parametrize("entry", GOLDENS, ids=lambda e: f"instance{e['id']}")
def test_ps2_matches_reference_objective(entry):
    ch, sp, ref = _golden_problem(entry, "ps2")
    sol = solve_ps2(sp, PrecoderSet.proper(ch.power_budgets))
    assert sol.t == pytest.approx(ref, rel=1e-5)
    assert kkt_residual(sp, sol) <= 1e-8
    assert sol.precoders.is_feasible(ch.power_budgets)
    assert np.all(sol.t_rows >= 0)
    assert np.all(-sp.margins(sol.precoders) <= -sol.t_rows**2 + 1e-7)
    assert abs(sol.t - np.max(sp.ser_values(sol.t_rows))) <= 1e-7


def test_zero_b_gives_zero_alpha(rng):
    ch, p, B, rows = _instance(rng, ["QPSK", "QPSK"], 10.0, "pep")
    sp = SubproblemPs1(ch, [np.zeros_like(b) for b in B], rows)
    sol = solve_ps1(sp, p)
    assert sol.alpha == pytest.approx(0.0, abs=1e-9)
    assert sol.precoders.is_feasible(ch.power_budgets)


def test_zero_b_gives_half_ser(rng):
    ch, p, B, rows = _instance(rng, ["QPSK", "PSK8"], 10.0, "ser")
    sp = SubproblemPs2(ch, [np.zeros_like(b) for b in B], rows)
    sol = solve_ps2(sp, p)
    np.testing.assert_array_equal(sol.t_rows, 0.0)
    assert sol.t == pytest.approx(0.5, abs=1e-12)
    assert sol.precoders.is_feasible(ch.power_budgets)


def _projected_gradient_ps1(sp, a0, budget, iters=20000):
    """Subgradient-free oracle for K=1: rows are linear in A, so maximize the
    smallest margin by projected ascent on the (concave) min of linear forms."""
    g = sp.quad.g[:, :4]
    r = sp.quad.r
    a = np.asarray(a0, dtype=float).reshape(4)
    best = np.inf
    for it in range(1, iters + 1):
        v = g @ a + r
        best = min(best, float(np.max(v)))
        i = int(np.argmax(v))
        a = a - (0.1 / np.sqrt(it)) * g[i]
        n = np.linalg.norm(a)
        if n > np.sqrt(budget):
            a *= np.sqrt(budget) / n
    return best


def test_single_user_power_constraint_active():
    ch = ChannelRealization([[1.7]], [[0.4]], 0.3, 2.0)
    c = build_constellation("PSK8")
    rows = [r.rows for r in _rows_for([c], "pep")]
    p0 = PrecoderSet.proper(ch.power_budgets)
    sp = SubproblemPs1(ch, [closed_form_b(ch, p0, rows[0], 0)], rows)
    sol = solve_ps1(sp, p0)
    assert sol.precoders.powers()[0] == pytest.approx(2.0, rel=1e-8)
    assert sol.alpha == pytest.approx(_projected_gradient_ps1(sp, p0.matrices, 2.0), abs=1e-6 * abs(sol.alpha) + 1e-6)


@pytest.mark.parametrize("beta,c,power", [(1.0, 0.3, 1.0), (2.5, 1.0, 0.5), (0.4, 0.05, 3.0)])
def test_scalar_ps2_analytic_optimum(beta, c, power):
    # one user, one row: value = sigma^2/2 b^2 - 2 |h| b a11 with b = (b0, 0), q = (1, 0)
    h = 1.0
    b0 = beta / h
    sigma2 = 2.0 * c / b0**2
    ch = ChannelRealization([[h]], [[0.0]], sigma2, power)
    sp = SubproblemPs2(ch, [np.array([[b0], [0.0]])], [np.array([[1.0, 0.0]])])
    sol = solve_ps2(sp, PrecoderSet.proper([power]))
    t1 = np.sqrt(2.0 * beta * np.sqrt(power) - c)
    assert sol.t_rows[0] == pytest.approx(t1, abs=1e-6)
    assert sol.t == pytest.approx(float(qfunc(t1 / 2)), abs=1e-6)
    assert sol.precoders[0][0, 0] == pytest.approx(np.sqrt(power), abs=1e-6)


def test_perturbed_solution_has_large_residual(rng):
    ch, p, B, rows = _instance(rng, ["QPSK", "QPSK"], 10.0, "pep")
    sp = SubproblemPs1(ch, B, rows)
    sol = solve_ps1(sp, p)
    assert kkt_residual(sp, sol) <= 1e-8
    bumped = sol.with_precoders(sol.precoders.matrices + 0.1 * rng.standard_normal((2, 2, 2)))
    assert kkt_residual(sp, bumped) > 1e-4


def test_feasibility_component_equals_power_violation():
    ch = ChannelRealization([[1.2]], [[0.0]], 0.5, 1.0)
    rows = [r.rows for r in _rows_for([build_constellation("QPSK")], "pep")]
    p0 = PrecoderSet.proper([1.0])
    sp = SubproblemPs1(ch, [closed_form_b(ch, p0, rows[0], 0)], rows)
    sol = solve_ps1(sp, p0)
    # with one user every row is linear in A: scaling up only lowers the rows
    over = sol.with_precoders(sol.precoders.matrices * 1.5)
    assert kkt_components(over.program, over.x, over.lam)["primal"] == pytest.approx(1.5**2 - 1.0, rel=1e-8)


def test_convexity_guard():
    good = np.array([np.diag([1.0, 0.0])])
    check_convexity(good)
    with pytest.raises(ValueError):
        check_convexity(np.array([np.diag([1.0, -1e-6])]))


def test_solver_is_deterministic(rng):
    ch, p, B, rows = _instance(rng, ["PSK8", "QPSK", "QPSK"], 15.0, "ser")
    s1 = solve_ps2(SubproblemPs2(ch, B, rows), p)
    s2 = solve_ps2(SubproblemPs2(ch, B, rows), p)
    assert s1.x.tobytes() == s2.x.tobytes()
    assert s1.lam.tobytes() == s2.lam.tobytes()


@pytest.mark.parametrize("variant", ["pep", "ser"])
def test_objective_invariant_to_row_order(rng, variant):
    ch, p, B, rows = _instance(rng, ["PSK8", "QPSK"], 10.0, variant)
    perms = [rng.permutation(len(r)) for r in rows]
    B2 = [b[:, pi] for b, pi in zip(B, perms)]
    rows2 = [r[pi] for r, pi in zip(rows, perms)]
    if variant == "pep":
        v1 = solve_ps1(SubproblemPs1(ch, B, rows), p).alpha
        v2 = solve_ps1(SubproblemPs1(ch, B2, rows2), p).alpha
    else:
        v1 = solve_ps2(SubproblemPs2(ch, B, rows), p).t
        v2 = solve_ps2(SubproblemPs2(ch, B2, rows2), p).t
    assert v2 == pytest.approx(v1, rel=1e-6, abs=1e-12)


def test_merit_non_increasing_within_each_stage(rng, tmp_path):
    ch, p, B, rows = _instance(rng, ["QPSK", "QPSK"], 10.0, "pep")
    sol = solve_ps1(SubproblemPs1(ch, B, rows), p, record=True)
    trace = sol.result.trace
    assert trace
    for prev, cur in zip(trace, trace[1:]):
        if prev[0] == cur[0]:
            assert cur[3] <= prev[3]
    path = tmp_path / "trace.csv"
    write_trace_csv(path, sol.result)
    with open(path, newline="") as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["stage", "step", "objective", "merit", "newton_decrement"]
    assert len(data) == len(trace) + 1


def test_mismatched_b_and_rows_rejected(rng):
    ch, p, B, rows = _instance(rng, ["QPSK", "QPSK"], 10.0, "pep")
    with pytest.raises(ValueError):
        SubproblemPs1(ch, [B[0][:, :2], B[1]], rows)


class _Disk(ConvexProgram):
    """min x0 + x1 over |x - center|^2 <= 1 (optimum center - (1, 1)/sqrt 2)."""

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)
        self.c = np.array([1.0, 1.0])

    def constraints(self, x):
        return np.array([np.sum((x - self.center) ** 2) - 1.0])

    def jacobian(self, x):
        return 2.0 * (x - self.center)[None, :]

    def hessian(self, x, w):
        return 2.0 * w[0] * np.eye(2)


def test_barrier_on_disk_with_phase_one():
    prob = _Disk([3.0, -2.0])
    x0 = find_interior(prob, np.zeros(2))
    assert prob.constraints(x0)[0] < 0
    res = barrier_solve(prob, x0)
    np.testing.assert_allclose(res.x, [3.0 - 2**-0.5, -2.0 - 2**-0.5], atol=1e-9)
    assert max(kkt_components(prob, res.x, res.lam).values()) < 1e-9


class _Empty(ConvexProgram):
    """x <= -1 and x >= 1: no feasible point."""

    c = np.array([0.0])

    def constraints(self, x):
        return np.array([x[0] + 1.0, 1.0 - x[0]])

    def jacobian(self, x):
        return np.array([[1.0], [-1.0]])

    def hessian(self, x, w):
        return np.zeros((1, 1))


def test_infeasible_program_raises():
    with pytest.raises(SolverError):
        find_interior(_Empty(), np.zeros(1))
