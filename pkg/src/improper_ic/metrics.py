"""Interference-plus-noise covariance, whitening, PEP and union-bound SER."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .channel import ChannelRealization
from .constellation import Constellation, DifferenceMatrix, difference_matrix

SER_PREFACTORS = ("paper", "conventional")


def qfunc(x):
    """Gaussian tail ``Q(x) = erfc(x / sqrt 2) / 2``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


@dataclass
class PrecoderSet:
    """The K real 2x2 precoders, stored as an array of shape (K, 2, 2)."""

    matrices: np.ndarray

    def __post_init__(self):
        self.matrices = np.array(self.matrices, dtype=float).reshape(-1, 2, 2)

    def __array__(self, dtype=None, copy=None):
        return self.matrices if dtype is None else self.matrices.astype(dtype)

    def __len__(self):
        return self.matrices.shape[0]

    def __getitem__(self, k):
        return self.matrices[k]

    @property
    def K(self) -> int:
        return self.matrices.shape[0]

    def powers(self) -> np.ndarray:
        """``Tr(A_k A_k^T)`` per user."""
        return np.einsum("kij,kij->k", self.matrices, self.matrices)

    def is_feasible(self, budgets, tol=1e-9) -> bool:
        return bool(np.all(self.powers() <= np.asarray(budgets) + tol))

    @classmethod
    def proper(cls, budgets) -> "PrecoderSet":
        """``A_k = sqrt(P_k / 2) I`` (conventional proper signalling)."""
        budgets = np.asarray(budgets, dtype=float)
        return cls(np.sqrt(budgets / 2.0)[:, None, None] * np.eye(2))

    def scaled(self, factors) -> "PrecoderSet":
        f = np.broadcast_to(np.asarray(factors, dtype=float), (self.K,))
        return PrecoderSet(self.matrices * f[:, None, None])


def _mats(p) -> np.ndarray:
    return np.asarray(p, dtype=float).reshape(-1, 2, 2)


def sym_inv_sqrt(w: np.ndarray) -> np.ndarray:
    """Inverse square root of SPD 2x2 matrices (batched over leading axes).

    Uses the closed form ``sqrt(W) = (W + sqrt(det W) I) / sqrt(tr W + 2 sqrt(det W))``
    applied to ``W^{-1}``.
    """
    w = np.asarray(w, dtype=float)
    a, b, c = w[..., 0, 0], 0.5 * (w[..., 0, 1] + w[..., 1, 0]), w[..., 1, 1]
    det = a * c - b * b
    inv = np.stack([np.stack([c, -b], -1), np.stack([-b, a], -1)], -2) / det[..., None, None]
    s = 1.0 / np.sqrt(det)
    t = np.sqrt((a + c) / det + 2.0 * s)
    return (inv + s[..., None, None] * np.eye(2)) / t[..., None, None]


def interference_covariances(ch: ChannelRealization, p) -> np.ndarray:
    """``W_k`` for every user, shape (K, 2, 2)."""
    a = _mats(p)
    rot = ch.cross_rotations()  # (K, K, 2, 2)
    # J(phi_kl) A_l for every (k, l)
    ja = np.einsum("klij,ljm->klim", rot, a)
    gain = ch.magnitudes**2 * (1.0 - np.eye(ch.K))
    cov = np.einsum("kl,klim,kljm->kij", gain, ja, ja)
    return cov + (ch.noise_powers / 2.0)[:, None, None] * np.eye(2)


@dataclass(frozen=True)
class WhitenedReceiver:
    """Covariance ``W_k`` of the effective noise and its inverse square root."""

    covariance: np.ndarray
    inv_sqrt: np.ndarray


def noise_covariance(ch: ChannelRealization, p, k: int) -> WhitenedReceiver:
    """Interference-plus-noise covariance at receiver ``k`` (rotated frame)."""
    w = interference_covariance(ch, p, k)
    return WhitenedReceiver(w, sym_inv_sqrt(w))


def interference_covariance(ch: ChannelRealization, p, k: int) -> np.ndarray:
    a = _mats(p)
    w = (ch.noise_powers[k] / 2.0) * np.eye(2)
    for l in range(ch.K):
        if l == k:
            continue
        ja = _rot(ch.phases[k, l] - ch.phases[k, k]) @ a[l]
        w = w + ch.magnitudes[k, l] ** 2 * (ja @ ja.T)
    return w


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def snr_matrix(ch: ChannelRealization, p, k: int) -> np.ndarray:
    """``|h_kk|^2 A_k^T W_k^{-1} A_k``; PEP arguments are quadratic forms in it."""
    a = _mats(p)[k]
    w = interference_covariance(ch, p, k)
    return ch.magnitudes[k, k] ** 2 * a.T @ np.linalg.solve(w, a)


def pep_arguments(ch: ChannelRealization, p, k: int, rows) -> np.ndarray:
    """Q-function arguments ``|h_kk| sqrt(delta^T A^T W^-1 A delta) / 2`` per row."""
    rows = np.asarray(getattr(rows, "rows", rows), dtype=float).reshape(-1, 2)
    m = snr_matrix(ch, p, k)
    quad = np.einsum("ni,ij,nj->n", rows, m, rows)
    return 0.5 * np.sqrt(np.maximum(quad, 0.0))


def pep(ch: ChannelRealization, p, k: int, d, d_tilde) -> float:
    """Pairwise error probability of deciding ``d_tilde`` when ``d`` was sent."""
    delta = np.asarray(d, dtype=float) - np.asarray(d_tilde, dtype=float)
    if not np.any(delta):
        raise ValueError("PEP needs two distinct symbols")
    return float(qfunc(pep_arguments(ch, p, k, delta[None, :])[0]))


def union_bound_ser(ch: ChannelRealization, p, k: int, c: Constellation, prefactor="paper") -> float:
    """Union-bound SER surrogate of user ``k``.

    ``prefactor="paper"`` averages the PEP over all ordered symbol pairs
    (constant ``1/(M(M-1))``); ``"conventional"`` is the textbook union bound
    with constant ``1/M``, i.e. ``(M-1)`` times larger.
    """
    f = difference_matrix(c)
    # PEP depends on the difference only through a quadratic form, so each
    # unordered pair counts twice among the M(M-1) ordered ones.
    mean_pep = float(np.mean(qfunc(pep_arguments(ch, p, k, f))))
    if prefactor == "paper":
        return mean_pep
    if prefactor == "conventional":
        return (c.order - 1) * mean_pep
    raise ValueError(f"prefactor must be one of {SER_PREFACTORS}")


def max_union_bound_ser(ch, p, constellations, prefactor="paper") -> float:
    return max(union_bound_ser(ch, p, k, c, prefactor) for k, c in enumerate(constellations))


def worst_pep(ch: ChannelRealization, p, k: int, q: DifferenceMatrix) -> float:
    """Largest PEP of user ``k`` over the rows of ``q``."""
    return float(qfunc(np.min(pep_arguments(ch, p, k, q))))


def max_worst_pep(ch, p, diff_matrices) -> float:
    return max(worst_pep(ch, p, k, q) for k, q in enumerate(diff_matrices))
