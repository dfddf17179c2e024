import numpy as np
import pytest

from sfnet.nn import build_network
from sfnet.trainer import (MuSchedule, NumericalError, SgdState, TrainSettings, compute_gradients,
                           mix_gradients, sgd_step, train)

TINY_SF = [{"kind": "conv", "size": 3, "out": 2}, {"kind": "maxpool", "size": 2},
           {"kind": "sf", "atoms": 6, "lambda1": 0.2}, {"kind": "linear", "out": 10}]


def toy_data(rng, n=12):
    return rng.random((n, 8, 8, 1)), np.arange(n) % 10


@pytest.mark.parametrize("mu, expected", [(0.0, [1.0, 2.0]), (1.0, [3.0, 5.0]), (0.25, [1.5, 2.75])])
def test_mix_gradients(mu, expected):
    np.testing.assert_allclose(mix_gradients([1.0, 2.0], [3.0, 5.0], mu), expected)


def test_mix_gradients_validates():
    with pytest.raises(ValueError, match="mu"):
        mix_gradients(np.ones(2), np.ones(2), 1.5)
    with pytest.raises(ValueError, match="shapes"):
        mix_gradients(np.ones(2), np.ones(3), 0.5)
    with pytest.raises(ValueError, match="registries"):
        mix_gradients({"a": np.ones(1)}, {"b": np.ones(1)}, 0.5)


def test_step_down_schedule():
    sched = MuSchedule.step_down(8)
    assert sched.trace() == [0.8, 0.8, 0.5, 0.5, 0.3, 0.3, 0.0, 0.0]
    assert MuSchedule.step_down(6).trace() == [0.8, 0.8, 0.5, 0.5, 0.3, 0.0]
    assert sched.mu_at(100) == 0.0


def test_schedule_rejects_bad_mu():
    with pytest.raises(ValueError):
        MuSchedule([(1.2, 3)])


def test_momentum_second_step_is_1_9_times_first():
    p = {"w": np.zeros(3)}
    g = {"w": np.array([1.0, -2.0, 0.5])}
    state = SgdState(learning_rate=1.0, momentum=0.9)
    sgd_step(p, g, state)
    first = p["w"].copy()
    sgd_step(p, g, state)
    np.testing.assert_allclose(p["w"] - first, 1.9 * first)


def test_quadratic_bowl_converges():
    c = np.array([3.0, -1.0, 0.5])
    p = {"w": np.zeros(3)}
    state = SgdState(learning_rate=0.1, momentum=0.5)
    for _ in range(200):
        sgd_step(p, {"w": p["w"] - c}, state)
    np.testing.assert_allclose(p["w"], c, atol=1e-8)


def test_non_finite_gradient_names_parameter():
    with pytest.raises(NumericalError, match="layer.weight"):
        sgd_step({"layer.weight": np.zeros(2)}, {"layer.weight": np.array([0.0, np.nan])}, SgdState())


def test_dictionary_norms_stay_bounded_over_fuzz(rng):
    net = build_network(TINY_SF, input_shape=(8, 8, 1), seed=0)
    params = net.named_params()
    state = SgdState(learning_rate=0.5, momentum=0.9)
    for _ in range(100):
        grads = {k: rng.standard_normal(v.shape) * 10 for k, v in params.items()}
        sgd_step(params, grads, state, net.dictionary_names())
        assert np.linalg.norm(params["2.sf.dictionary"], axis=0).max() <= 1.0 + 1e-12


def test_mu_zero_is_bit_identical_to_supervised(rng):
    x, y = toy_data(rng)
    results = []
    for sched, unl in [(None, None), (MuSchedule.constant(3, 0.0), x)]:
        net = build_network(TINY_SF, input_shape=(8, 8, 1), seed=4)
        train(net, (x, y), TrainSettings(epochs=3, batch_size=4, schedule=sched, seed=1), unlabeled=unl)
        results.append({k: v.copy() for k, v in net.named_params().items()})
    for k in results[0]:
        assert results[0][k].tobytes() == results[1][k].tobytes()


def test_mu_trace_is_logged(rng):
    x, y = toy_data(rng)
    net = build_network(TINY_SF, input_shape=(8, 8, 1), seed=4)
    rows = train(net, (x, y), TrainSettings(epochs=4, batch_size=6, schedule=MuSchedule.step_down(4)),
                 unlabeled=x)
    assert [r["mu"] for r in rows if r["split"] == "train"] == [0.8, 0.5, 0.3, 0.0]


def test_mixed_gradient_combines_both_paths(rng):
    x, y = toy_data(rng, 4)
    net = build_network(TINY_SF, input_shape=(8, 8, 1), seed=4)
    _, _, g0 = compute_gradients(net, x, y, 0.0)
    g0 = {k: v.copy() for k, v in g0.items()}
    _, gu = net.backward_unsup()
    gu = {k: v.copy() for k, v in gu.items()}
    _, _, g = compute_gradients(net, x, y, 0.3)
    for k in g:
        expected = g0[k] if k.startswith("3.") else 0.7 * g0[k] + 0.3 * gu[k]
        np.testing.assert_allclose(g[k], expected, atol=1e-12)
    assert not np.allclose(g["2.sf.dictionary"], g0["2.sf.dictionary"])


def test_training_reduces_loss(rng):
    x, y = toy_data(rng, 20)
    net = build_network([{"kind": "linear", "out": 10}], input_shape=(8, 8, 1))
    rows = train(net, (x, y), TrainSettings(epochs=30, batch_size=5, learning_rate=0.1))
    assert rows[-1]["loss"] < 0.5 * rows[0]["loss"]


def test_schedule_length_must_match_epochs(rng):
    x, y = toy_data(rng)
    net = build_network(TINY_SF, input_shape=(8, 8, 1))
    with pytest.raises(ValueError, match="covers"):
        train(net, (x, y), TrainSettings(epochs=3, schedule=MuSchedule.step_down(4)))


def test_dictionary_scope_leaves_lower_layers_supervised(rng):
    x, y = toy_data(rng, 4)
    net = build_network(TINY_SF, input_shape=(8, 8, 1), seed=4)
    _, _, g0 = compute_gradients(net, x, y, 0.0)
    g0 = {k: v.copy() for k, v in g0.items()}
    _, _, g = compute_gradients(net, x, y, 0.5, unsup_scope="dictionary")
    np.testing.assert_array_equal(g["0.conv.weight"], g0["0.conv.weight"])
    assert not np.allclose(g["2.sf.dictionary"], g0["2.sf.dictionary"])
    with pytest.raises(ValueError, match="unsup_scope"):
        compute_gradients(net, x, y, 0.5, unsup_scope="all")
