import numpy as np
import pytest

from qconsensus.weights import WeightSequence, alpha, persistence_check


def test_alpha_values():
    w = WeightSequence(a=0.1, tau=1.0)
    assert alpha(w, 0) == pytest.approx(0.1)
    assert alpha(w, 9) == pytest.approx(0.01)
    np.testing.assert_allclose(w.alpha(np.arange(3)), [0.1, 0.05, 0.1 / 3])
    assert WeightSequence(a=1.0, tau=0.5, scale=0.01).alpha(3) == pytest.approx(0.005)


def test_alpha_rejects_negative_iteration():
    with pytest.raises(ValueError):
        alpha(WeightSequence(a=1.0), -1)


@pytest.mark.parametrize("kwargs", [dict(a=0.0), dict(a=1.0, tau=0.0), dict(a=1.0, scale=-1.0),
                                    dict(a=1.0, tau_d=-0.1), dict(a=1.0, d0=0.0)])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        WeightSequence(**kwargs)


def test_scaled_keeps_shape():
    w = WeightSequence(a=2.0, tau=0.8, tau_d=0.1, d0=3.0).scaled(0.5)
    assert w.gain == 1.0
    assert (w.tau, w.tau_d, w.d0) == (0.8, 0.1, 3.0)


def test_step_schedule():
    w = WeightSequence(a=1.0, tau_d=0.5, d0=2.0)
    assert w.delta(3, base_step=7.0) == pytest.approx(4.0)
    assert WeightSequence(a=1.0).delta(3, base_step=7.0) == 7.0
    np.testing.assert_array_equal(WeightSequence(a=1.0).delta(np.arange(3), 0.5), [0.5, 0.5, 0.5])


@pytest.mark.parametrize(
    "tau, tau_d, expected",
    [
        (1.0, None, (True, True)),
        (0.75, None, (True, True)),
        (0.5, None, (False, False)),
        (1.2, None, (False, False)),
        (1.0, 0.2, (True, True)),
        (1.0, 0.5, (True, False)),
        (0.8, 0.2, (True, True)),
        (0.8, 0.3, (True, False)),
    ],
)
def test_persistence(tau, tau_d, expected):
    assert tuple(persistence_check(WeightSequence(a=1.0, tau=tau, tau_d=tau_d))) == expected
