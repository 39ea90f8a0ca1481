import numpy as np
import numpy.testing as npt
import pytest

from BKLibQSeld.exceptions import OptimizationError
from BKLibQSeld.optim.adam import Adam, AdamState, adam_step


def test_first_step_moves_by_learning_rate():
    params = {"w": np.zeros((3, 2))}
    Adam(lr=1e-3).step(params, {"w": np.ones((3, 2))})
    npt.assert_allclose(params["w"], -1e-3, rtol=1e-6)


def test_zero_gradient_leaves_parameters_unchanged(rng):
    initial = rng.standard_normal(5)
    params = {"w": initial.copy()}
    optimizer = Adam()
    for _ in range(10):
        optimizer.step(params, {"w": np.zeros(5)})
    npt.assert_array_equal(params["w"], initial)
    assert optimizer.state.step == 10


def test_non_finite_gradient_aborts_step():
    params = {"a": np.ones(2), "b": np.ones(2)}
    optimizer = Adam()
    with pytest.raises(OptimizationError) as info:
        optimizer.step(params, {"a": np.ones(2), "b": np.array([1.0, np.nan])})
    assert info.value.parameter == "b"
    npt.assert_array_equal(params["a"], 1.0)
    assert optimizer.state.step == 0


def test_functional_step_matches_class(rng):
    grads = {"w": rng.standard_normal(4)}
    a, b = {"w": np.ones(4)}, {"w": np.ones(4)}
    Adam(lr=1e-2).step(a, grads)
    state = adam_step(AdamState(lr=1e-2), b, grads)
    npt.assert_array_equal(a["w"], b["w"])
    assert state.step == 1
    assert set(state.tensors()) == {"adam.m.w", "adam.v.w"}


def test_state_round_trip_through_tensors(rng):
    params = {"w": rng.standard_normal(3)}
    optimizer = Adam()
    optimizer.step(params, {"w": rng.standard_normal(3)})
    restored = AdamState()
    restored.load_tensors(optimizer.state.tensors(), optimizer.state.step)
    npt.assert_array_equal(restored.m["w"], optimizer.state.m["w"])
    npt.assert_array_equal(restored.v["w"], optimizer.state.v["w"])
    assert restored.step == 1


def test_two_steps_decrease_a_quadratic():
    def loss(w):
        return 0.5 * float((w[0] - 3.0) ** 2)

    params = {"w": np.zeros(1)}
    optimizer = Adam()
    losses = [loss(params["w"])]
    for _ in range(2):
        optimizer.step(params, {"w": params["w"] - 3.0})
        losses.append(loss(params["w"]))
    assert losses[0] > losses[1] > losses[2]
    npt.assert_allclose(params["w"], 2e-3, rtol=1e-3)
