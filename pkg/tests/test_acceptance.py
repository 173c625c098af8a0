"""End-to-end acceptance checks, each at its stated scale and tolerance.

Every test records one PASS/FAIL line that is printed in the pytest summary
section "acceptance criteria".
"""

from pathlib import Path

import numpy as np
import pytest

from improper_ic.algorithms import AlgoConfig, minmax_pep, minmax_ser
from improper_ic.benchmarks import min_il_ia
from improper_ic.channel import THREE_USER_CHANNEL, fixed_channel, rayleigh_channel
from improper_ic.config import load_spec, parse_spec
from improper_ic.constellation import build_constellation, difference_matrix, reduce_difference_matrix
from improper_ic.montecarlo import simulate_pep, sweep, write_csv
from improper_ic.verify import check_b_identity, check_constellations, check_subproblem, load_goldens

pytestmark = pytest.mark.slow

FIGS = Path(__file__).resolve().parents[1] / "figs"
BENCHMARKS = ("ps-pc", "minsum-mse", "minmax-mse", "minil-ia", "maxsinr-ia")
PER_BIT_OFFSET_DB = 10 * np.log10(2.0)


def _table(rows):
    """``{scheme: {grid_value: mean_max_ser}}``."""
    out = {}
    for r in rows:
        out.setdefault(r["scheme"], {})[r["grid_value"]] = r["mean_max_ser"]
    return out


@pytest.fixture(scope="module")
def fig3_rows():
    return sweep(load_spec(FIGS / "fig3.spec"))


def test_criterion_01_pep_oracle(report):
    rng = np.random.default_rng(101)
    c = build_constellation("PSK8")
    worst, bad = 0.0, []
    for i in range(20):
        base = rayleigh_channel(2, rng)
        a = rng.standard_normal((2, 2, 2))
        a *= np.sqrt(1.0 / np.einsum("kij,kij->k", a, a))[:, None, None]
        for snr2 in (0.0, 5.0, 10.0, 15.0):
            ch = base.with_snr([10.0, snr2])
            res = simulate_pep(ch, a, c, 0, 100_000, rng, "gaussian")
            z = abs(res.mean_sim - res.mean_analytic) / res.std_error
            worst = max(worst, z)
            if z > 3.0:
                bad.append((i, snr2, round(z, 2)))
    ok = report(1, not bad, f"80 points, largest gap {worst:.2f} SE" + (f", over 3 SE at {bad}" if bad else ""))
    assert ok


def test_criterion_02_constellation_goldens(report):
    counts = []
    for label in ("QPSK", "PSK8"):
        f = difference_matrix(build_constellation(label))
        counts += [f.count, reduce_difference_matrix(f).count]
    try:
        detail = check_constellations(load_goldens())
        ok = counts == [6, 4, 28, 8]
    except AssertionError as exc:
        detail, ok = str(exc), False
    report(2, ok, f"{detail}; row counts {counts}")
    assert ok


def test_criterion_03_b_identity(report):
    try:
        detail, ok = check_b_identity(50), True
    except AssertionError as exc:
        detail, ok = str(exc), False
    report(3, ok, detail)
    assert ok


def test_criterion_04_descent(report):
    rng = np.random.default_rng(404)
    c = build_constellation("QPSK")
    worst_rise, worst_iter, capped, problems = -np.inf, 0, 0, []
    for i in range(50):
        ch = rayleigh_channel(3, rng).with_snr(10.0)
        for fn in (minmax_pep, minmax_ser):
            res = fn(ch, [c] * 3, AlgoConfig())
            for run in res.runs:
                rise = float(np.max(np.diff(run.history), initial=-np.inf))
                worst_rise = max(worst_rise, rise)
                capped += not run.converged
                if rise > 1e-7:
                    problems.append((i, fn.__name__, "rise", rise))
            worst_iter = max(worst_iter, res.iterations)
            if not res.converged or res.iterations > 100:
                problems.append((i, fn.__name__, "not converged", res.iterations))
    detail = (
        f"50 instances, largest step change {worst_rise:.1e}, at most {worst_iter} outer iterations; "
        f"{capped} exploratory starts stopped at the cap"
    )
    ok = report(4, not problems, detail + (f"; violations {problems[:5]}" if problems else ""))
    assert ok


def test_criterion_05_inner_solver_goldens(report):
    goldens = load_goldens()
    ok, lines = True, []
    for which in ("ps1", "ps2"):
        try:
            lines.append(f"{which}: {check_subproblem(goldens, which)}")
        except AssertionError as exc:
            ok = False
            lines.append(f"{which}: {exc}")
    report(5, ok, "; ".join(lines))
    assert ok


def test_criterion_06_two_user_shapes(report, fig3_rows):
    t = _table(fig3_rows)
    lines, ok = [], True
    for s in ("ps-pc", "minsum-mse", "minmax-mse"):
        sat = t[s][20.0] >= 0.5 * t[s][10.0]
        ok &= sat
        lines.append(f"{s} {t[s][10.0]:.3g}->{t[s][20.0]:.3g}{'' if sat else ' (no saturation)'}")
    for s in ("minmax-pep", "minmax-ser", "minil-ia", "maxsinr-ia"):
        curve = [t[s][g] for g in sorted(t[s])]
        good = all(b <= a for a, b in zip(curve, curve[1:])) and t[s][20.0] <= 0.2 * t[s][10.0]
        ok &= good
        lines.append(f"{s} {t[s][10.0]:.3g}->{t[s][20.0]:.3g}{'' if good else ' (not decreasing)'}")
    report(6, ok, "; ".join(lines))
    assert ok


def test_criterion_07_three_user_dominance(report):
    t = _table(sweep(load_spec(FIGS / "fig4.spec")))
    ok, lines = True, []
    for snr in (20.0, 30.0):
        ours = min(t["minmax-pep"][snr], t["minmax-ser"][snr])
        best = min(BENCHMARKS, key=lambda s: t[s][snr])
        dominant = all(ours < t[s][snr] for s in BENCHMARKS)
        ok &= dominant
        lines.append(f"{snr:g} dB: ours {ours:.3g} vs best benchmark {best} {t[best][snr]:.3g}")
    ch = fixed_channel(THREE_USER_CHANNEL).with_snr(20.0)
    leak = min_il_ia(ch).info["leakage"] / float(np.sum(ch.power_budgets))
    ok &= leak > 1e-4
    lines.append(f"IA leakage {leak:.3g} of total power")
    report(7, ok, "; ".join(lines))
    assert ok


def test_criterion_08_rayleigh_reference(report):
    # the reference curve is written in per-bit SNR; QPSK carries two bits per symbol
    grid = [round(float(x + PER_BIT_OFFSET_DB), 6) for x in (0.0, 10.0, 20.0)]
    spec = parse_spec(
        f"""\
name: rayleigh_reference
scenario: rayleigh
modulations: [QPSK]
grid: {grid}
schemes: [ps-pc]
n_symbols: 100000
n_realizations: 200
fading_sampling: importance
seed: 8
"""
    )
    rows = sweep(spec)
    ok, lines = True, []
    for x, row in zip((0, 10, 20), rows):
        snr = 10 ** (x / 10)
        ref = 1 - np.sqrt(snr / (1 + snr))
        rel = row["mean_max_ser"] / ref - 1
        ok &= abs(rel) <= 0.10
        lines.append(f"{x} dB {row['mean_max_ser']:.4g} vs {ref:.4g} ({rel:+.1%})")
    report(8, ok, "; ".join(lines))
    assert ok


def test_criterion_09_cellular_scaling(report):
    spec = load_spec(FIGS / "fig6.spec")
    spec.grid = [47.0, 57.0]
    rows = sweep(spec)
    t = _table(rows)
    snr = {r["grid_value"]: r["snr_db"] for r in rows}
    top, low = 57.0, 47.0
    ia_like = ("minmax-pep", "minmax-ser", "minil-ia", "maxsinr-ia")
    vals = [t[s][top] for s in ia_like]
    spread = max(vals) / min(vals) if min(vals) > 0 else np.inf
    ok = spread <= 1.5
    lines = [f"spread {spread:.2f} at {top:g} dBm"]
    decade = (snr[top] - snr[low]) / 10
    for s in ia_like:
        slope = np.log10(t[s][top] / t[s][low]) / decade if t[s][top] > 0 else -np.inf
        ok &= abs(slope + 1) <= 0.2
        lines.append(f"{s} slope {slope:.2f}")
    for s in BENCHMARKS[:3]:
        sat = t[s][top] >= 0.5 * t[s][low]
        ok &= sat
        lines.append(f"{s} {t[s][low]:.3g}->{t[s][top]:.3g}")
    report(9, ok, "; ".join(lines))
    assert ok


def test_criterion_10_determinism(report, fig3_rows, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(a, fig3_rows)
    write_csv(b, sweep(load_spec(FIGS / "fig3.spec")))
    ok = a.read_bytes() == b.read_bytes()
    report(10, ok, "fig3 sweep rerun " + ("byte-identical" if ok else "differs"))
    assert ok
