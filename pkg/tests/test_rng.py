import numpy as np
import pytest

from nowcastsim.rng import (anchored_uniform, keyed_normal, keyed_uniform,
                            logistic_noise)


def test_keyed_uniform_is_deterministic_and_order_free():
    ids = np.arange(1000)
    a = keyed_uniform(99, "stream", ids)
    b = keyed_uniform(99, "stream", ids)
    assert np.array_equal(a, b)
    shuffled = ids[::-1]
    c = keyed_uniform(99, "stream", shuffled)
    assert np.array_equal(c, a[::-1])


def test_keyed_uniform_range_and_spread():
    u = keyed_uniform(1, "x", np.arange(100_000))
    assert np.all((u >= 0.0) & (u < 1.0))
    assert abs(u.mean() - 0.5) < 0.01
    # streams with different labels or seeds decorrelate
    v = keyed_uniform(1, "y", np.arange(100_000))
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.02
    w = keyed_uniform(2, "x", np.arange(100_000))
    assert abs(np.corrcoef(u, w)[0, 1]) < 0.02


def test_keyed_uniform_scalar():
    u = keyed_uniform(5, "s", 17)
    assert isinstance(u, float)
    assert u == keyed_uniform(5, "s", np.array([17]))[0]


def test_keyed_normal_moments():
    z = keyed_normal(3, "n", np.arange(100_000))
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_logistic_noise_moments():
    x = logistic_noise(4, "l", np.arange(100_000))
    assert abs(x.mean()) < 0.05
    assert abs(x.std() - np.pi / np.sqrt(3.0)) < 0.05


def test_anchored_uniform_bands():
    raw = keyed_uniform(0, "a", np.arange(5000))
    u_true = anchored_uniform(0.3, np.ones(5000, dtype=bool), raw)
    u_false = anchored_uniform(0.3, np.zeros(5000, dtype=bool), raw)
    assert np.all((u_true >= 0.0) & (u_true < 0.3))
    assert np.all((u_false >= 0.3) & (u_false < 1.0))


def test_anchored_uniform_rejects_degenerate_probs():
    with pytest.raises(ValueError):
        anchored_uniform(0.0, True, 0.5)
    with pytest.raises(ValueError):
        anchored_uniform(1.0, False, 0.5)
