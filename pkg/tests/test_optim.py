import numpy as np
import pytest

from ccmotion.optim import RmsPropState, TrainingDiverged, lr_schedule, rmsprop_step


def test_single_step_hand_values():
    # v = 0.01*g^2, p -= lr*g/(sqrt(v)+eps), worked by hand:
    p = {"w": np.array([1.0])}
    g = {"w": np.array([2.0])}
    st = RmsPropState(rho=0.99, eps=1e-8)
    rmsprop_step(p, g, st, lr=0.1)
    v = 0.01 * 4.0
    want = 1.0 - 0.1 * 2.0 / (np.sqrt(v) + 1e-8)
    assert p["w"][0] == pytest.approx(want, rel=1e-15)
    assert st.v["w"][0] == pytest.approx(v, rel=1e-15)


def test_two_steps_accumulator_decay():
    p = {"w": np.array([0.0])}
    st = RmsPropState(rho=0.9, eps=1e-8)
    rmsprop_step(p, {"w": np.array([1.0])}, st, lr=0.0)
    rmsprop_step(p, {"w": np.array([3.0])}, st, lr=0.0)
    # v1 = 0.1, v2 = 0.9*0.1 + 0.1*9 = 0.99
    assert st.v["w"][0] == pytest.approx(0.99, rel=1e-12)


def test_zero_grad_keeps_param():
    p = {"w": np.array([5.0, -3.0])}
    st = RmsPropState()
    for _ in range(3):
        rmsprop_step(p, {"w": np.zeros(2)}, st, lr=1.0)
    np.testing.assert_array_equal(p["w"], [5.0, -3.0])


def test_nan_grad_aborts_without_touching_params():
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    st = RmsPropState()
    with pytest.raises(TrainingDiverged):
        rmsprop_step(p, {"a": np.array([np.nan]), "b": np.array([1.0])}, st, lr=0.1)
    assert p["a"][0] == 1.0 and p["b"][0] == 2.0


def test_missing_grad_rejected():
    with pytest.raises(KeyError):
        rmsprop_step({"a": np.array([1.0])}, {}, RmsPropState(), lr=0.1)


def test_lr_schedule_paper_defaults():
    assert lr_schedule(0) == pytest.approx(1e-4)
    assert lr_schedule(499) == pytest.approx(1e-4)
    assert lr_schedule(500) == pytest.approx(5e-5)
    assert lr_schedule(999) == pytest.approx(5e-5)
    assert lr_schedule(1000) == pytest.approx(2.5e-5)
    assert lr_schedule(1500) == pytest.approx(1.25e-5)


def test_lr_schedule_custom_period():
    assert lr_schedule(10, initial=1e-3, period=10) == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        lr_schedule(-1)
    with pytest.raises(ValueError):
        lr_schedule(0, period=0)
