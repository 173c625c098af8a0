import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from improper_ic.constellation import (
    SUPPORTED_LABELS,
    Constellation,
    build_constellation,
    canonical_label,
    difference_matrix,
    pam_equivalent,
    reduce_difference_matrix,
)
from improper_ic.errors import ConfigurationError
from improper_ic.verify import row_set

S2 = np.sqrt(2.0)
TWO_D = [lab for lab in SUPPORTED_LABELS if not lab.startswith("PAM")]


def test_qpsk_symbols_exact():
    c = build_constellation("QPSK")
    assert {tuple(s) for s in c.symbols} == {(1, 1), (1, -1), (-1, -1), (-1, 1)}
    assert c.order == 4 and c.dimensionality == 2


def test_8psk_symbols_are_scaled_unit_circle():
    c = build_constellation("8PSK")
    expected = {(0, S2), (1, 1), (S2, 0), (1, -1), (0, -S2), (-1, -1), (-S2, 0), (-1, 1)}
    got = {tuple(np.round(s, 12) + 0.0) for s in c.symbols}
    assert got == {tuple(np.round(e, 12) + 0.0) for e in expected}


def test_pam4_and_pam8_levels():
    np.testing.assert_allclose(
        build_constellation("PAM4").symbols[:, 0], np.array([-3, -1, 1, 3]) * np.sqrt(2 / 5), atol=1e-15
    )
    np.testing.assert_allclose(
        build_constellation("PAM8").symbols[:, 0], np.arange(-7, 8, 2) * np.sqrt(2 / 21), atol=1e-15
    )
    assert build_constellation("PAM8").dimensionality == 1


@pytest.mark.parametrize("label", TWO_D)
def test_second_moment_is_identity(label):
    np.testing.assert_allclose(build_constellation(label).second_moment(), np.eye(2), atol=1e-12)


@pytest.mark.parametrize("label", SUPPORTED_LABELS)
def test_symbols_distinct_and_power_two(label):
    c = build_constellation(label)
    assert len({tuple(s) for s in c.symbols}) == c.order
    assert np.mean(np.sum(c.symbols**2, axis=1)) == pytest.approx(2.0, abs=1e-12)


def test_unknown_label_is_configuration_error():
    with pytest.raises(ConfigurationError, match="unsupported constellation"):
        build_constellation("17QAM")


def test_aliases():
    assert canonical_label("8psk") == "PSK8"
    assert canonical_label("16-QAM") == "QAM16"
    assert canonical_label("BPSK") == "PAM2"


# printed difference matrices (x row, y row), compared as unordered +-row sets
F_QPSK = np.array([[0, 2, 2, 2, 2, 0], [2, 2, 0, 0, -2, -2]]).T
Q_QPSK = np.array([[0, 2, 2, 2], [2, 2, 0, -2]]).T
Q_8PSK = np.array([[S2 - 1, S2, 1, 2, 1, S2, S2 - 1, 0], [-1, -S2, -S2 + 1, 0, S2 - 1, S2, 1, 2]]).T


def test_qpsk_full_and_reduced_match_printed():
    f = difference_matrix(build_constellation("QPSK"))
    q = reduce_difference_matrix(f)
    assert f.count == 6 and q.count == 4
    assert row_set(f.rows) == row_set(F_QPSK)
    assert row_set(q.rows) == row_set(Q_QPSK)


def test_8psk_counts_and_reduced_rows():
    f = difference_matrix(build_constellation("8PSK"))
    q = reduce_difference_matrix(f)
    assert f.count == 28 and q.count == 8 and q.reduced
    assert row_set(q.rows) == row_set(Q_8PSK)


def test_difference_sign_convention_and_two_symbols():
    c = Constellation("two", [[1.0, 0.0], [-1.0, 0.0]])
    f = difference_matrix(c)
    np.testing.assert_array_equal(f.rows, [[2.0, 0.0]])
    i, j = 0, 1
    qp = build_constellation("QPSK")
    np.testing.assert_array_equal(difference_matrix(qp).rows[0], qp.symbols[i] - qp.symbols[j])


def test_reduce_without_collinear_rows_is_identity():
    f = difference_matrix(Constellation("tri", [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]))
    q = reduce_difference_matrix(f)
    np.testing.assert_array_equal(q.rows, f.rows)


@pytest.mark.parametrize("label", TWO_D)
def test_reduction_properties(label):
    f = difference_matrix(build_constellation(label))
    q = reduce_difference_matrix(f)
    # idempotent
    np.testing.assert_array_equal(reduce_difference_matrix(q).rows, q.rows)
    # no two retained rows collinear
    for u, v in itertools.combinations(q.rows, 2):
        assert abs(u[0] * v[1] - u[1] * v[0]) > 1e-9 * np.linalg.norm(u) * np.linalg.norm(v)
    # every full row is a multiple (>= 1 in norm) of some retained row
    for r in f.rows:
        hits = [
            s for s in q.rows if abs(r[0] * s[1] - r[1] * s[0]) <= 1e-9 * np.linalg.norm(r) * np.linalg.norm(s)
        ]
        assert len(hits) == 1
        assert np.linalg.norm(hits[0]) <= np.linalg.norm(r) + 1e-12


@pytest.mark.parametrize(
    "label,levels",
    [("QPSK", np.array([-3, -1, 1, 3]) * np.sqrt(2 / 5)), ("8PSK", np.arange(-7, 8, 2) * np.sqrt(2 / 21))],
)
def test_pam_equivalent(label, levels):
    p = pam_equivalent(build_constellation(label))
    np.testing.assert_allclose(p.symbols[:, 0], levels, atol=1e-15)
    np.testing.assert_array_equal(p.symbols[:, 1], 0.0)


def test_pam_equivalent_biphase():
    p = pam_equivalent(Constellation("bi", [[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(np.sort(p.symbols[:, 0]), [-S2, S2])


@given(st.integers(min_value=2, max_value=32))
def test_pam_mean_square_two(m):
    p = pam_equivalent(Constellation("x", np.zeros((m, 2)) + np.arange(m)[:, None]))
    assert np.mean(p.symbols[:, 0] ** 2) == pytest.approx(2.0, abs=1e-12)


@given(st.floats(0, 2 * np.pi), st.integers(3, 12))
def test_rotated_psk_reduction_matches_unrotated_count(phase, m):
    ang = 2 * np.pi * np.arange(m) / m + phase
    c = Constellation("psk", np.column_stack([np.cos(ang), np.sin(ang)]) * S2)
    q = reduce_difference_matrix(difference_matrix(c))
    # chords of a regular M-gon point in exactly M distinct directions
    assert q.count == m
