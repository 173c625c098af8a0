"""CSV persistence for precoder sets and channel realizations."""

from __future__ import annotations

import csv

import numpy as np

from .channel import ChannelRealization
from .errors import ConfigurationError
from .metrics import PrecoderSet

PRECODER_COLUMNS = ("user", "a11", "a12", "a21", "a22")
CHANNEL_COLUMNS = ("rx", "tx", "magnitude", "phase")


def save_precoders(path, precoders):
    """One row per user with the row-major entries of ``A_k``."""
    a = np.asarray(precoders, dtype=float).reshape(-1, 4)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRECODER_COLUMNS)
        for k, row in enumerate(a):
            w.writerow([k, *(repr(float(x)) for x in row)])


def load_precoders(path) -> PrecoderSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or tuple(rows[0].keys()) != PRECODER_COLUMNS:
        raise ConfigurationError(f"{path}: expected columns {', '.join(PRECODER_COLUMNS)}")
    rows.sort(key=lambda r: int(r["user"]))
    return PrecoderSet(np.array([[float(r[c]) for c in PRECODER_COLUMNS[1:]] for r in rows]))


def save_channel(path, ch: ChannelRealization):
    """Link table ``(rx, tx, |h|, theta)`` followed by per-user noise and budget rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHANNEL_COLUMNS)
        for k in range(ch.K):
            for l in range(ch.K):
                w.writerow([k, l, repr(float(ch.magnitudes[k, l])), repr(float(ch.phases[k, l]))])
        w.writerow(["user", "noise_power", "power_budget", ""])
        for k in range(ch.K):
            w.writerow([k, repr(float(ch.noise_powers[k])), repr(float(ch.power_budgets[k])), ""])


def load_channel(path) -> ChannelRealization:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CHANNEL_COLUMNS:
        raise ConfigurationError(f"{path}: expected columns {', '.join(CHANNEL_COLUMNS)}")
    split = next((i for i, r in enumerate(rows) if r and r[0] == "user"), None)
    if split is None:
        raise ConfigurationError(f"{path}: missing the user,noise_power,power_budget section")
    links = rows[1:split]
    K = int(round(np.sqrt(len(links))))
    if K * K != len(links):
        raise ConfigurationError(f"{path}: link table is not K x K")
    mag = np.zeros((K, K))
    ph = np.zeros((K, K))
    for r in links:
        k, l = int(r[0]), int(r[1])
        mag[k, l], ph[k, l] = float(r[2]), float(r[3])
    users = rows[split + 1 : split + 1 + K]
    noise = [float(r[1]) for r in users]
    budget = [float(r[2]) for r in users]
    return ChannelRealization(mag, ph, noise, budget)
