import numpy as np
import pytest

from improper_ic.channel import rayleigh_channel
from improper_ic.errors import ConfigurationError
from improper_ic.io import load_channel, load_precoders, save_channel, save_precoders
from improper_ic.metrics import PrecoderSet


def test_precoder_round_trip_is_exact(tmp_path, rng):
    p = PrecoderSet(rng.standard_normal((3, 2, 2)))
    path = tmp_path / "a.csv"
    save_precoders(path, p)
    assert path.read_text().splitlines()[0] == "user,a11,a12,a21,a22"
    np.testing.assert_array_equal(load_precoders(path).matrices, p.matrices)


def test_channel_round_trip_is_exact(tmp_path, rng):
    ch = rayleigh_channel(3, rng).with_snr([0.0, 10.0, 20.0])
    path = tmp_path / "h.csv"
    save_channel(path, ch)
    back = load_channel(path)
    np.testing.assert_array_equal(back.magnitudes, ch.magnitudes)
    np.testing.assert_array_equal(back.phases, ch.phases)
    np.testing.assert_array_equal(back.noise_powers, ch.noise_powers)
    np.testing.assert_array_equal(back.power_budgets, ch.power_budgets)


def test_bad_headers_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("k,x\n0,1\n")
    with pytest.raises(ConfigurationError):
        load_precoders(path)
    with pytest.raises(ConfigurationError):
        load_channel(path)
    path.write_text("rx,tx,magnitude,phase\n0,0,1.0,0.0\n")
    with pytest.raises(ConfigurationError):
        load_channel(path)
