"""Generate reference objectives for the precoder subproblems.

Run once; writes ``src/improper_ic/data/goldens.json``.  The min-max PEP step
is solved with cvxpy (Clarabel) and the min-max SER step with SciPy SLSQP from
several starts, so neither reference touches the in-house barrier solver.

    python scripts/make_goldens.py [--out PATH]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from improper_ic.algorithms import _rows_for, closed_form_b
from improper_ic.channel import rayleigh_channel
from improper_ic.constellation import build_constellation
from improper_ic.convex.subproblems import build_rows
from improper_ic.metrics import PrecoderSet

OUT = Path(__file__).resolve().parents[1] / "src" / "improper_ic" / "data" / "goldens.json"
_S = np.sqrt(2.0)
# difference matrices as printed (columns are the x and y coordinates of each row)
PRINTED = {
    "F_QPSK": [[0, 2, 2, 2, 2, 0], [2, 2, 0, 0, -2, -2]],
    "Q_QPSK": [[0, 2, 2, 2], [2, 2, 0, -2]],
    "F_PSK8": [
        [_S - 1, _S, _S + 1, 2 * _S, _S + 1, _S, _S - 1, 1, 2, _S + 1, 2, 1,
         0, 1, _S, 1, 0, -1, _S - 1, 0, -1, -2, -_S + 1, -_S, -_S - 1, -1, -2, -1],
        [-1, -_S, -1, 0, 1, _S, 1, -_S + 1, 0, 1, 2, _S + 1,
         2, _S - 1, _S, _S + 1, 2 * _S, _S + 1, 1, 2, _S + 1, 2, 1, _S, 1, _S - 1, 0, -_S + 1],
    ],
    "Q_PSK8": [[_S - 1, _S, 1, 2, 1, _S, _S - 1, 0], [-1, -_S, -_S + 1, 0, _S - 1, _S, 1, 2]],
}
CASES = [
    (["QPSK", "QPSK"], 10.0),
    (["PSK8", "QPSK"], 10.0),
    (["QPSK", "PSK8"], 5.0),
    (["PSK8", "PSK8"], 15.0),
    (["QPSK", "QPSK"], 20.0),
    (["QPSK", "QPSK", "QPSK"], 10.0),
    (["QPSK", "QPSK", "QPSK"], 0.0),
    (["QPSK", "PSK8", "QPSK"], 10.0),
    (["PSK8", "QPSK"], 0.0),
    (["QPSK", "QPSK", "QPSK"], 15.0),
]


def reference_ps1(ch, B, rows):
    q = build_rows(ch, B, rows)
    a = cp.Variable(4 * ch.K)
    alpha = cp.Variable()
    cons = [
        cp.quad_form(a, cp.psd_wrap(0.5 * (P + P.T))) + g @ a + r <= alpha
        for P, g, r in zip(q.P, q.g, q.r)
    ]
    cons += [cp.sum_squares(a[4 * k : 4 * k + 4]) <= ch.power_budgets[k] for k in range(ch.K)]
    prob = cp.Problem(cp.Minimize(alpha), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return float(prob.value)


def reference_ps2(ch, B, rows, rng, starts=8):
    q = build_rows(ch, B, rows)
    m, na, K = len(q.r), 4 * ch.K, ch.K
    counts = np.bincount(q.user, minlength=K)

    def split(x):
        return x[0], x[1 : 1 + m], x[1 + m :]

    def ser(tr):
        return np.bincount(q.user, weights=ndtr(-tr / 2.0), minlength=K) / counts

    cons = [
        {"type": "ineq", "fun": lambda x: -(q.values(split(x)[2]) + split(x)[1] ** 2)},
        {"type": "ineq", "fun": lambda x: split(x)[1]},
        {"type": "ineq", "fun": lambda x: split(x)[0] - ser(split(x)[1])},
        {
            "type": "ineq",
            "fun": lambda x: ch.power_budgets - np.sum(split(x)[2].reshape(K, 4) ** 2, axis=1),
        },
    ]
    best = np.inf
    for s in range(starts):
        a0 = PrecoderSet.proper(ch.power_budgets).matrices.reshape(-1) * 0.9
        if s:
            a0 = a0 + 0.3 * rng.standard_normal(na)
            a0 *= np.repeat(np.minimum(1.0, np.sqrt(0.9 * ch.power_budgets / np.sum(a0.reshape(K, 4) ** 2, 1))), 4)
        t0 = np.sqrt(np.maximum(-q.values(a0), 0.0) / 2.0)
        x0 = np.concatenate([[1.0], t0, a0])
        res = minimize(lambda x: x[0], x0, jac=lambda x: np.eye(len(x))[0], constraints=cons,
                       method="SLSQP", options={"ftol": 1e-15, "maxiter": 2000})
        _, tr, a = split(res.x)
        # re-evaluate feasibly: clip t rows to the admissible margin
        tr = np.minimum(np.maximum(tr, 0.0), np.sqrt(np.maximum(-q.values(a), 0.0)))
        if np.all(np.sum(a.reshape(K, 4) ** 2, 1) <= ch.power_budgets * (1 + 1e-9)):
            best = min(best, float(np.max(ser(tr))))
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(2024)
    instances = []
    for i, (labels, snr_db) in enumerate(CASES):
        cons = [build_constellation(m) for m in labels]
        ch = rayleigh_channel(len(labels), rng).with_snr(snr_db)
        p = PrecoderSet(rng.standard_normal((ch.K, 2, 2)))
        p = p.scaled(np.sqrt(ch.power_budgets / p.powers()))
        entry = {
            "id": i,
            "modulations": labels,
            "snr_db": snr_db,
            "magnitudes": ch.magnitudes.tolist(),
            "phases": ch.phases.tolist(),
            "noise_powers": ch.noise_powers.tolist(),
            "power_budgets": ch.power_budgets.tolist(),
            "precoders": p.matrices.tolist(),
        }
        for name, variant, ref in (("ps1", "pep", reference_ps1), ("ps2", "ser", None)):
            rows = [r.rows for r in _rows_for(cons, variant)]
            B = [closed_form_b(ch, p, rows[k], k) for k in range(ch.K)]
            obj = ref(ch, B, rows) if ref else reference_ps2(ch, B, rows, rng)
            entry[name] = {"B": [b.tolist() for b in B], "rows": [r.tolist() for r in rows], "objective": obj}
        instances.append(entry)
        print(f"instance {i}: ps1={entry['ps1']['objective']:.10g} ps2={entry['ps2']['objective']:.10g}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    matrices = {k: np.array(v, dtype=float).T.tolist() for k, v in PRINTED.items()}
    doc = {"generator": "scripts/make_goldens.py", "difference_matrices": matrices, "instances": instances}
    args.out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
