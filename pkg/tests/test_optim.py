import math

import numpy as np
import pytest

from intermep import optim
from intermep import tensor as tn


def single(value=1.0, name="w"):
    params = {name: tn.Parameter([value], dtype="float64")}
    return params, optim.OptimizerState.create(params, lr=0.1, weight_decay=0.0)


def test_parameter_group():
    assert optim.parameter_group("text.layers.3.attention.k.lora_A") == "lora"
    assert optim.parameter_group("lora_B") == "lora"
    assert optim.parameter_group("classifier.out.weight") == "default"
    assert optim.parameter_group("lora.weight") == "default"


def test_create_skips_frozen():
    params = {"a": tn.Parameter([1.0]), "b": tn.Parameter([1.0], trainable=False)}
    state = optim.OptimizerState.create(params)
    assert list(state.first_moment) == ["a"]


def test_zero_grad_only_decays():
    params = {"w": tn.Parameter([2.0, -4.0], dtype="float64")}
    state = optim.OptimizerState.create(params, weight_decay=0.01)
    optim.adamw_step(params, {"w": np.zeros(2)}, state, 0.1)
    assert np.allclose(params["w"].data, np.array([2.0, -4.0]) * (1 - 0.1 * 0.01))


def test_zero_grad_zero_decay_is_identity():
    params = {"w": tn.Parameter([2.0, -4.0], dtype="float64")}
    state = optim.OptimizerState.create(params, weight_decay=0.0)
    optim.adamw_step(params, {"w": np.zeros(2)}, state, 0.1)
    assert np.array_equal(params["w"].data, [2.0, -4.0])


def test_zero_lr_updates_moments_only():
    params, state = single()
    optim.adamw_step(params, {"w": np.array([0.5])}, state, 0.0)
    assert params["w"].data[0] == 1.0
    assert np.isclose(state.first_moment["w"][0], 0.05)
    assert state.step_count == 1


def test_two_steps_match_reference():
    """
    Two AdamW steps on one scalar against a hand-written recurrence.

    """
    params = {"w": tn.Parameter([1.0], dtype="float64")}
    state = optim.OptimizerState.create(params, weight_decay=0.01)
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01

    p, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate([0.5, -0.25], start=1):
        optim.adamw_step(params, {"w": np.array([g])}, state, lr)
        p *= 1 - lr * wd
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        assert np.isclose(params["w"].data[0], p, rtol=0, atol=1e-12)
    assert state.step_count == 2


def test_first_step_moves_by_lr():
    params, state = single()
    optim.adamw_step(params, {"w": np.array([0.5])}, state, 0.1)
    assert np.isclose(params["w"].data[0], 0.9)


def test_group_learning_rates():
    params = {"a.weight": tn.Parameter([1.0], dtype="float64"),
              "a.lora_B": tn.Parameter([1.0], dtype="float64")}
    state = optim.OptimizerState.create(params, weight_decay=0.0)
    grads = {"a.weight": np.array([1.0]), "a.lora_B": np.array([1.0])}
    optim.adamw_step(params, grads, state, {"default": 0.1, "lora": 0.01})
    assert np.isclose(params["a.weight"].data[0], 0.9)
    assert np.isclose(params["a.lora_B"].data[0], 0.99)


def test_shape_mismatch():
    params, state = single()
    with pytest.raises(ValueError, match="shape"):
        optim.adamw_step(params, {"w": np.zeros(2)}, state, 0.1)


def test_missing_gradient():
    params, state = single()
    with pytest.raises(ValueError, match="do not match"):
        optim.adamw_step(params, {}, state, 0.1)


def test_negative_lr():
    params, state = single()
    with pytest.raises(ValueError):
        optim.adamw_step(params, {"w": np.zeros(1)}, state, -0.1)


def test_rejected_group_rate_leaves_state_untouched():
    params = {"a.weight": tn.Parameter([1.0, 1.0], dtype="float64"),
              "a.lora_B": tn.Parameter([1.0, 1.0], dtype="float64")}
    state = optim.OptimizerState.create(params, weight_decay=0.01)
    grads = {"a.weight": np.ones(2), "a.lora_B": np.ones(2)}
    with pytest.raises(ValueError, match="non-negative"):
        optim.adamw_step(params, grads, state, {"default": 0.1, "lora": -1.0})
    assert state.step_count == 0
    for name, param in params.items():
        assert np.array_equal(param.data, [1.0, 1.0])
        assert not state.first_moment[name].any()
        assert not state.second_moment[name].any()


def test_lr_schedule_points():
    sched = optim.LrSchedule(5e-4, 100)
    assert optim.lr_at(0, sched) == 0.0
    assert np.isclose(optim.lr_at(10, sched), 2.5e-4)
    assert np.isclose(optim.lr_at(20, sched), 5e-4, rtol=0, atol=1e-15)
    assert np.isclose(optim.lr_at(100, sched), 5e-6, rtol=0, atol=1e-15)


def test_lr_schedule_continuous_at_warmup():
    sched = optim.LrSchedule(5e-4, 100)
    left = sched.base_lr * (20 - 1e-9) / sched.warmup_steps
    assert abs(left - optim.lr_at(20, sched)) < 1e-12


def test_lr_schedule_monotone_decay():
    sched = optim.LrSchedule(1e-3, 50, warmup_fraction=0.1)
    rates = [optim.lr_at(s, sched) for s in range(5, 51)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_lr_at_out_of_range():
    sched = optim.LrSchedule(5e-4, 10)
    with pytest.raises(ValueError):
        optim.lr_at(11, sched)
    with pytest.raises(ValueError):
        optim.lr_at(-1, sched)


@pytest.mark.parametrize("kwargs", [
    dict(base_lr=0.0, total_steps=10),
    dict(base_lr=1e-3, total_steps=0),
    dict(base_lr=1e-3, total_steps=10, warmup_fraction=1.0),
    dict(base_lr=1e-3, total_steps=10, min_lr_fraction=0.0),
])
def test_lr_schedule_invalid(kwargs):
    with pytest.raises(ValueError):
        optim.LrSchedule(**kwargs)
