"""Adam and learning-rate schedule tests with closed-form oracles."""

import math

import numpy as np
import pytest

from dualspeech.autodiff import ContractViolation, Tensor
from dualspeech.optim import OptimizerState, adam_step, lr_schedule


def closed_form(step, d_model=256, warmup=4000):
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@pytest.mark.parametrize("step,expected", [
    (1, 2.4705e-7),
    (4000, 9.882e-4),
    (16000, 4.941e-4),
])
def test_schedule_reference_points(step, expected):
    got = lr_schedule(step, d_model=256, warmup_steps=4000)
    assert got == pytest.approx(expected, rel=1e-3)
    assert got == pytest.approx(closed_form(step), rel=1e-12)


def test_schedule_peak_exactly_at_warmup():
    values = [lr_schedule(s, 256, 4000) for s in range(1, 20001)]
    assert int(np.argmax(values)) + 1 == 4000


def test_schedule_monotone_around_warmup():
    rates = [lr_schedule(s, 64, 200) for s in range(1, 1001)]
    up, down = rates[:200], rates[199:]
    assert all(a < b for a, b in zip(up, up[1:]))
    assert all(a > b for a, b in zip(down, down[1:]))


def test_schedule_rejects_step_zero():
    with pytest.raises(ContractViolation):
        lr_schedule(0, 256, 4000)


def _single_param(value=1.0):
    p = Tensor(np.array([value]), requires_grad=True)
    params = {"p": p}
    state = OptimizerState(params, d_model=256, warmup_steps=4000)
    return p, params, state


def test_zero_gradient_leaves_params_unchanged():
    p, params, state = _single_param()
    p.grad = np.zeros(1)
    adam_step(params, state)
    assert p.data[0] == 1.0 and state.step == 1


def test_missing_gradient_treated_as_zero():
    p, params, state = _single_param()
    adam_step(params, state)
    assert p.data[0] == 1.0


def test_single_step_closed_form():
    # grad 1 at step 1: m-hat = 1, v-hat = 1 -> update = lr(1)/(1 + eps)
    p, params, state = _single_param(0.0)
    p.grad = np.ones(1)
    adam_step(params, state)
    lr = closed_form(1)
    expected = -lr * 1.0 / (1.0 + 1e-9)
    assert p.data[0] == pytest.approx(expected, rel=1e-12)


def test_moment_recurrence_two_identical_steps():
    p, params, state = _single_param(0.0)
    g = 0.7
    m = v = 0.0
    for _ in range(2):
        p.grad = np.full(1, g)
        adam_step(params, state)
        m = 0.9 * m + 0.1 * g
        v = 0.98 * v + 0.02 * g * g
    assert state.m["p"][0] == pytest.approx(m, rel=1e-14)
    assert state.v["p"][0] == pytest.approx(v, rel=1e-14)
    assert state.step == 2


def test_shape_mismatch_rejected():
    p, params, state = _single_param()
    p.grad = np.ones(2)
    with pytest.raises(ContractViolation):
        adam_step(params, state)
