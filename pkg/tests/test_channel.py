import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import trapezoid

from improper_ic.channel import (
    THREE_USER_CHANNEL,
    TWO_USER_CHANNEL,
    ChannelRealization,
    _is_cdf,
    _is_density,
    _is_inverse,
    cell_geometry,
    cellular_channel,
    draw_fading,
    fixed_channel,
    noise_power_dbm,
    path_loss_db,
    rayleigh_channel,
    relative_phase,
    rotation,
)
from improper_ic.errors import ConfigurationError

angles = st.floats(-10.0, 10.0, allow_nan=False)


def test_rotation_special_values():
    np.testing.assert_array_equal(rotation(0.0), np.eye(2))
    np.testing.assert_allclose(rotation(np.pi / 2), [[0, -1], [1, 0]], atol=1e-16)


@given(angles, angles)
def test_rotation_group_law(a, b):
    np.testing.assert_allclose(rotation(a) @ rotation(b), rotation(a + b), atol=1e-12)


@given(angles)
def test_rotation_orthogonal(a):
    j = rotation(a)
    np.testing.assert_allclose(j.T @ j, np.eye(2), atol=1e-12)
    assert np.linalg.det(j) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.01, 5.0), angles, st.floats(-3, 3), st.floats(-3, 3))
def test_real_view_matches_complex_product(mag, theta, xr, xi):
    z = mag * np.exp(1j * theta) * (xr + 1j * xi)
    np.testing.assert_allclose(mag * rotation(theta) @ [xr, xi], [z.real, z.imag], atol=1e-12)


def test_relative_phase():
    ph = np.array([[0.25, 1.0], [0.0, 0.0]])
    ch = ChannelRealization(np.ones((2, 2)), ph, 1.0, 1.0)
    assert relative_phase(ch, 0, 1) == pytest.approx(0.75)
    ch2 = ChannelRealization(np.ones((2, 2)), np.full((2, 2), 0.4), 1.0, 1.0)
    assert relative_phase(ch2, 0, 1) == 0.0
    with pytest.raises(ValueError):
        relative_phase(ch, 1, 1)


@given(angles, angles)
def test_relative_rotation_consistency(tkk, tkl):
    ch = ChannelRealization(np.ones((2, 2)), [[tkk, tkl], [0.0, 0.0]], 1.0, 1.0)
    np.testing.assert_allclose(
        rotation(relative_phase(ch, 0, 1)), rotation(tkk).T @ rotation(tkl), atol=1e-12
    )
    np.testing.assert_allclose(ch.cross_rotations()[0, 1], rotation(tkl - tkk), atol=1e-12)


def test_fixed_channels_match_printed_entries():
    ch = fixed_channel(TWO_USER_CHANNEL)
    assert ch.magnitudes[0, 0] == pytest.approx(1.9310)
    assert ch.phases[0, 0] == pytest.approx(-2.0228)
    assert ch.magnitudes[0, 1] == pytest.approx(0.7732) and ch.phases[0, 1] == pytest.approx(0.5865)
    assert ch.magnitudes[1, 0] == pytest.approx(0.9249) and ch.phases[1, 0] == pytest.approx(3.0213)
    assert ch.magnitudes[1, 1] == pytest.approx(2.3742) and ch.phases[1, 1] == pytest.approx(0.2089)
    ch3 = fixed_channel(THREE_USER_CHANNEL)
    assert ch3.magnitudes[2, 2] == pytest.approx(2.1935) and ch3.phases[2, 2] == pytest.approx(1.7364)


def test_fixed_channel_identity_and_errors():
    ch = fixed_channel(np.eye(3))
    np.testing.assert_array_equal(ch.magnitudes, np.eye(3))
    np.testing.assert_array_equal(ch.phases, 0.0)
    with pytest.raises(ConfigurationError):
        fixed_channel(np.ones((2, 3)))


def test_invalid_realizations_rejected():
    with pytest.raises(ConfigurationError):
        ChannelRealization(-np.ones((2, 2)), np.zeros((2, 2)), 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        ChannelRealization(np.ones((2, 2)), np.zeros((2, 2)), 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        ChannelRealization(np.ones((2, 2)), np.zeros((2, 2)), 1.0, -1.0)


def test_rayleigh_statistics():
    rng = np.random.default_rng(1)
    h = np.concatenate([rayleigh_channel(10, rng).complex_matrix().ravel() for _ in range(1000)])
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.02)
    assert abs(np.mean(h.real)) < 0.02 and abs(np.mean(h.imag)) < 0.02
    ks = stats.kstest(np.angle(h), stats.uniform(loc=-np.pi, scale=2 * np.pi).cdf).statistic
    assert ks < 0.02


def test_snr_and_normalization():
    ch = fixed_channel(TWO_USER_CHANNEL, noise_powers=[2.0, 0.5], power_budgets=[4.0, 1.0])
    np.testing.assert_allclose(ch.snr, [2.0, 2.0])
    np.testing.assert_allclose(ch.with_snr(10.0).snr, [10.0, 10.0])
    n = ch.normalized()
    np.testing.assert_array_equal(n.noise_powers, 1.0)
    np.testing.assert_array_equal(n.power_budgets, 1.0)
    # |h_kl|^2 P_l / sigma_k^2 is preserved
    np.testing.assert_allclose(n.magnitudes**2, ch.magnitudes**2 * ch.power_budgets[None, :] / ch.noise_powers[:, None])


def test_path_loss_and_noise_constants():
    assert float(path_loss_db(1000.0)) == pytest.approx(-111.0)
    assert noise_power_dbm() == pytest.approx(-104.0)


def test_cell_geometry_distances():
    bs, users = cell_geometry("two_cell")
    d = np.linalg.norm(users[:, None] - bs[None], axis=-1)
    np.testing.assert_allclose(np.diag(d), 1000.0)
    bs, users = cell_geometry("three_cell")
    d = np.linalg.norm(users[:, None] - bs[None], axis=-1)
    np.testing.assert_allclose(np.diag(d), 1000.0)
    assert np.all(d[~np.eye(3, dtype=bool)] > 1000.0)


def test_cellular_channel_power_range_and_metadata(rng):
    with pytest.raises(ConfigurationError):
        cellular_channel("two_cell", 60.0, rng)
    with pytest.raises(ConfigurationError):
        cellular_channel("two_cell", 5.0, rng)
    ch = cellular_channel("two_cell", 47.0, rng)
    assert ch.meta["mean_direct_snr_db"] == pytest.approx(47.0 - 111.0 + 104.0)
    gains = []
    for _ in range(4000):
        c = cellular_channel("three_cell", 30.0, rng)
        gains.append(c.magnitudes[0, 0] ** 2)
    assert np.mean(gains) == pytest.approx(10 ** (-11.1), rel=0.06)


def test_importance_proposal_is_a_distribution():
    g = np.logspace(-9, 2, 2001)
    assert _is_cdf(np.array(1e-12)) < 1e-6
    assert _is_cdf(np.array(200.0)) == pytest.approx(1.0)
    assert np.all(np.diff(_is_cdf(g)) >= 0)
    u = np.linspace(0.001, 0.999, 57)
    np.testing.assert_allclose(_is_cdf(_is_inverse(u)), u, atol=1e-10)
    # density integrates to one
    x = np.logspace(-12, np.log10(60), 200001)
    assert trapezoid(_is_density(x) * x, np.log(x)) == pytest.approx(1.0, abs=1e-3)


def test_importance_weights_are_unbiased():
    rng = np.random.default_rng(5)
    fd = draw_fading(2, 4000, rng, "importance")
    gam = np.abs(fd.gains[:, 0, 0]) ** 2
    assert np.mean(fd.weights) == pytest.approx(1.0, abs=0.03)
    # E[1/(1+10 g)] under Exp(1)
    exact = stats.expon.expect(lambda x: 1.0 / (1.0 + 10.0 * x))
    est = np.mean(fd.weights * 1.0 / (1.0 + 10.0 * gam))
    assert est == pytest.approx(exact, rel=0.02)
    plain = draw_fading(2, 10, rng, "plain")
    np.testing.assert_array_equal(plain.weights, 1.0)
    with pytest.raises(ConfigurationError):
        draw_fading(2, 3, rng, "bogus")
