"""Installation self-check: a fast oracle suite with a pass/fail table.

Checks
------
constellation-goldens
    QPSK and 8PSK difference matrices (full and reduced) equal the stored
    reference matrices as unordered sets of rows up to sign.
b-identity
    Substituting the closed-form ``B_k`` into ``G_k`` gives
    ``-|h_kk|^2 Q A^T W^-1 A Q^T`` to 1e-10.
pep-vs-montecarlo
    Analytical mean PEP under Gaussian interference lies within three
    standard errors of the simulated one.
ps1-goldens, ps2-goldens
    The barrier solver reproduces stored reference objectives to 1e-5
    relative with KKT residual at most 1e-8.
descent
    Minmax-PEP and Minmax-SER histories are non-increasing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .algorithms import AlgoConfig, closed_form_b, g_matrix, minmax_pep, minmax_ser
from .channel import ChannelRealization, rayleigh_channel
from .constellation import build_constellation, difference_matrix, reduce_difference_matrix
from .convex.subproblems import SubproblemPs1, SubproblemPs2, solve_ps1, solve_ps2
from .metrics import PrecoderSet, interference_covariance
from .montecarlo import simulate_pep

GOLDEN_REL_TOL = 1e-5
KKT_TOL = 1e-8
IDENTITY_TOL = 1e-10
DESCENT_SLACK = 1e-7


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def default_goldens_path() -> Path:
    return Path(str(resources.files("improper_ic") / "data" / "goldens.json"))


def load_goldens(path=None) -> dict:
    with open(path or default_goldens_path(), encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "instances" not in doc or "difference_matrices" not in doc:
        raise ValueError("missing 'instances' or 'difference_matrices'")
    return doc


def row_set(rows, decimals=9) -> list:
    """Rows as a sorted list of sign-normalized tuples."""
    out = []
    for r in np.round(np.asarray(rows, dtype=float).reshape(-1, 2), decimals) + 0.0:
        if r[0] < 0 or (r[0] == 0 and r[1] < 0):
            r = -r + 0.0
        out.append(tuple(r))
    return sorted(out)


def check_constellations(goldens) -> str:
    mats = goldens["difference_matrices"]
    bad = []
    for label in ("QPSK", "PSK8"):
        f = difference_matrix(build_constellation(label))
        q = reduce_difference_matrix(f)
        for name, m in (("F", f), ("Q", q)):
            ref = mats[f"{name}_{label}"]
            if row_set(m.rows) != row_set(ref):
                bad.append(f"{name}_{label}")
    if bad:
        raise AssertionError("mismatch in " + ", ".join(bad))
    return "F/Q for QPSK and 8PSK match (6, 4, 28, 8 rows)"


def check_b_identity(n_instances, seed=11) -> str:
    rng = np.random.default_rng(seed)
    q = reduce_difference_matrix(difference_matrix(build_constellation("PSK8"))).rows
    worst = 0.0
    for _ in range(n_instances):
        ch = rayleigh_channel(3, rng).with_snr(10.0)
        p = PrecoderSet(rng.standard_normal((3, 2, 2)))
        for k in range(3):
            b = closed_form_b(ch, p, q, k)
            a = p[k]
            w = interference_covariance(ch, p, k)
            ref = -ch.magnitudes[k, k] ** 2 * q @ a.T @ np.linalg.solve(w, a) @ q.T
            worst = max(worst, float(np.max(np.abs(g_matrix(ch, p, b, q, k) - ref))))
    if worst > IDENTITY_TOL:
        raise AssertionError(f"max deviation {worst:.2e} > {IDENTITY_TOL:g}")
    return f"{n_instances} instances, max deviation {worst:.1e}"


def check_pep(n_symbols, seed=5) -> str:
    rng = np.random.default_rng(seed)
    c = build_constellation("PSK8")
    worst = 0.0
    for snr2 in (0.0, 10.0):
        ch = rayleigh_channel(2, rng).with_snr([10.0, snr2])
        a = rng.standard_normal((2, 2, 2))
        a *= np.sqrt(1.0 / np.einsum("kij,kij->k", a, a))[:, None, None]
        res = simulate_pep(ch, a, c, 0, n_symbols, rng, "gaussian")
        z = abs(res.mean_sim - res.mean_analytic) / max(res.std_error, 1e-300)
        if z > 3.0:
            raise AssertionError(
                f"SNR2={snr2:g} dB: simulated {res.mean_sim:.4g} vs analytic {res.mean_analytic:.4g} ({z:.1f} SE)"
            )
        worst = max(worst, z)
    return f"{n_symbols} symbols per point, largest gap {worst:.2f} SE"


def _golden_channel(e):
    return ChannelRealization(e["magnitudes"], e["phases"], e["noise_powers"], e["power_budgets"])


def check_subproblem(goldens, which, n_instances=None) -> str:
    cls, solve = (SubproblemPs1, solve_ps1) if which == "ps1" else (SubproblemPs2, solve_ps2)
    worst_rel, worst_kkt = 0.0, 0.0
    for e in goldens["instances"][:n_instances]:
        ch = _golden_channel(e)
        g = e[which]
        sp = cls(ch, [np.array(b, dtype=float) for b in g["B"]], [np.array(r, dtype=float) for r in g["rows"]])
        sol = solve(sp, PrecoderSet.proper(ch.power_budgets))
        value = sol.alpha if which == "ps1" else sol.t
        ref = float(g["objective"])
        rel = abs(value - ref) / max(abs(ref), 1e-300)
        kkt = sol.kkt_residual
        if rel > GOLDEN_REL_TOL or kkt > KKT_TOL:
            raise AssertionError(
                f"instance {e['id']}: objective {value:.10g} vs golden {ref:.10g} (rel {rel:.1e}), KKT {kkt:.1e}"
            )
        worst_rel, worst_kkt = max(worst_rel, rel), max(worst_kkt, kkt)
    n = len(goldens["instances"][:n_instances])
    return f"{n} instances, max rel error {worst_rel:.1e}, max KKT {worst_kkt:.1e}"


def check_descent(n_instances, seed=3, n_starts=1) -> str:
    rng = np.random.default_rng(seed)
    c = build_constellation("QPSK")
    cfg = AlgoConfig(n_starts=n_starts)
    worst_iter = 0
    for _ in range(n_instances):
        ch = rayleigh_channel(3, rng).with_snr(10.0)
        for fn in (minmax_pep, minmax_ser):
            res = fn(ch, [c] * 3, cfg)
            for run in res.runs:
                h = np.asarray(run.history)
                if np.any(np.diff(h) > DESCENT_SLACK):
                    raise AssertionError(f"{fn.__name__}: objective increased by {np.max(np.diff(h)):.2e}")
                if not run.converged:
                    raise AssertionError(f"{fn.__name__}: no convergence in {run.iterations} iterations")
                worst_iter = max(worst_iter, run.iterations)
    return f"{n_instances} three-user instances, at most {worst_iter} outer iterations"


def run_checks(quick: bool = False, goldens_path=None) -> list:
    """Run the suite; every check is reported, failures do not stop later checks."""
    results = []
    try:
        goldens = load_goldens(goldens_path)
        gold_err = None
    except (OSError, ValueError, KeyError) as exc:
        goldens, gold_err = None, f"golden file unreadable: {exc}"

    def needs_goldens(fn):
        def wrapped():
            if goldens is None:
                raise AssertionError(gold_err)
            return fn(goldens)

        return wrapped

    checks = [
        ("constellation-goldens", needs_goldens(check_constellations)),
        ("b-identity", lambda: check_b_identity(5 if quick else 50)),
        ("pep-vs-montecarlo", lambda: check_pep(20_000 if quick else 100_000)),
        ("ps1-goldens", needs_goldens(lambda g: check_subproblem(g, "ps1"))),
        ("ps2-goldens", needs_goldens(lambda g: check_subproblem(g, "ps2"))),
        ("descent", lambda: check_descent(1 if quick else 3)),
    ]
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            detail, ok = fn(), True
        except Exception as exc:  # a crashing check is a failed check
            detail, ok = f"{type(exc).__name__}: {exc}" if not isinstance(exc, AssertionError) else str(exc), False
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return results


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  time(s)  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
