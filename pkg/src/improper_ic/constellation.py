"""Normalized signal constellations and their pairwise difference matrices.

Two-dimensional constellations are stored as real ``(M, 2)`` arrays with
identity second moment, i.e. ``mean(d d^T) = I``.  One-dimensional PAM sets
used by the alignment benchmarks are embedded as ``(s, 0)`` with mean-square
amplitude 2, so both kinds carry the same average energy per symbol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Constellation",
    "DifferenceMatrix",
    "build_constellation",
    "difference_matrix",
    "reduce_difference_matrix",
    "pam_equivalent",
    "SUPPORTED_LABELS",
]

COLLINEAR_TOL = 1e-9

_SQ2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Constellation:
    """A finite symbol set.

    Attributes
    ----------
    name : str
        Canonical label (``QPSK``, ``PSK8``, ``QAM16``, ``PAM4`` ...).
    symbols : ndarray, shape (M, 2)
        Symbol coordinates.  For 1-D sets the second column is zero.
    dimensionality : int
        1 for PAM, 2 otherwise.
    """

    name: str
    symbols: np.ndarray
    dimensionality: int = 2

    def __post_init__(self):
        sym = np.array(self.symbols, dtype=float).reshape(-1, 2)
        sym.setflags(write=False)
        object.__setattr__(self, "symbols", sym)

    @property
    def order(self) -> int:
        return self.symbols.shape[0]

    def __len__(self) -> int:
        return self.order

    def second_moment(self) -> np.ndarray:
        """Empirical ``(1/M) sum d d^T``."""
        return self.symbols.T @ self.symbols / self.order


@dataclass(frozen=True)
class DifferenceMatrix:
    """Stacked symbol differences ``d - d'`` (one row per retained pair)."""

    rows: np.ndarray
    reduced: bool = False

    def __post_init__(self):
        r = np.array(self.rows, dtype=float).reshape(-1, 2)
        r.setflags(write=False)
        object.__setattr__(self, "rows", r)

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    def __len__(self) -> int:
        return self.count


def _psk8():
    return np.array(
        [
            [0.0, _SQ2],
            [1.0, 1.0],
            [_SQ2, 0.0],
            [1.0, -1.0],
            [0.0, -_SQ2],
            [-1.0, -1.0],
            [-_SQ2, 0.0],
            [-1.0, 1.0],
        ]
    )


def _square_qam(m):
    side = int(round(np.sqrt(m)))
    levels = np.arange(-side + 1, side, 2, dtype=float)
    # per-axis mean square of the odd-integer grid is (side^2 - 1)/3
    levels = levels / np.sqrt((side**2 - 1) / 3.0)
    # row-major over (I, Q) with Q descending, like the usual QAM drawings
    return np.array([[i, q] for q in levels[::-1] for i in levels])


def _pam_levels(m):
    levels = np.arange(-m + 1, m, 2, dtype=float)
    return levels * np.sqrt(6.0 / (m * m - 1))


def _pam(m):
    lv = _pam_levels(m)
    return np.column_stack([lv, np.zeros_like(lv)])


_BUILDERS = {
    "QPSK": (lambda: np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]]), 2),
    "PSK8": (_psk8, 2),
    "QAM16": (lambda: _square_qam(16), 2),
    "QAM64": (lambda: _square_qam(64), 2),
    "PAM2": (lambda: _pam(2), 1),
    "PAM4": (lambda: _pam(4), 1),
    "PAM8": (lambda: _pam(8), 1),
    "PAM16": (lambda: _pam(16), 1),
}

_ALIASES = {
    "8PSK": "PSK8",
    "16QAM": "QAM16",
    "64QAM": "QAM64",
    "4QAM": "QPSK",
    "QAM4": "QPSK",
    "2PAM": "PAM2",
    "BPSK": "PAM2",
    "4PAM": "PAM4",
    "8PAM": "PAM8",
    "16PAM": "PAM16",
}

SUPPORTED_LABELS = tuple(sorted(_BUILDERS))


def canonical_label(name: str) -> str:
    key = str(name).strip().upper().replace("-", "")
    key = _ALIASES.get(key, key)
    if key not in _BUILDERS:
        raise ConfigurationError(
            f"unsupported constellation {name!r}; expected one of {', '.join(SUPPORTED_LABELS)}"
        )
    return key


def build_constellation(name: str) -> Constellation:
    """Return the normalized constellation registered under ``name``.

    Raises
    ------
    ConfigurationError
        If ``name`` is not a known label.
    """
    key = canonical_label(name)
    builder, dim = _BUILDERS[key]
    return Constellation(key, builder(), dimensionality=dim)


def difference_matrix(c: Constellation) -> DifferenceMatrix:
    """All ``M(M-1)/2`` differences, earlier-indexed symbol minus later."""
    if c.order < 2:
        raise ValueError("a difference matrix needs at least two symbols")
    i, j = np.triu_indices(c.order, k=1)
    return DifferenceMatrix(c.symbols[i] - c.symbols[j], reduced=False)


def reduce_difference_matrix(f: DifferenceMatrix, tol: float = COLLINEAR_TOL) -> DifferenceMatrix:
    """Keep one minimum-norm row per collinearity class.

    Two rows ``u, v`` are collinear when ``|u x v| <= tol * |u| |v|``.  Classes
    are emitted in order of first appearance in ``f``.  Zero rows (never
    produced by a valid constellation) are dropped.
    """
    rows = f.rows
    norms = np.linalg.norm(rows, axis=1)
    reps: list[int] = []
    for idx, (u, nu) in enumerate(zip(rows, norms)):
        if nu == 0.0:
            continue
        for slot, r in enumerate(reps):
            v = rows[r]
            if abs(u[0] * v[1] - u[1] * v[0]) <= tol * nu * norms[r]:
                if nu < norms[r]:
                    reps[slot] = idx
                break
        else:
            reps.append(idx)
    return DifferenceMatrix(rows[reps], reduced=True)


def pam_equivalent(c: Constellation) -> Constellation:
    """M-PAM with the same order as ``c`` and mean-square amplitude 2."""
    return Constellation(f"PAM{c.order}", _pam(c.order), dimensionality=1)
