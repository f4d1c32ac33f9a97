import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_maxima, central_diff, rel_err, tiny_mlp
from rrt import engine, hardening, model
from rrt.activation import MIN_THRESHOLD, ThresholdSet
from rrt.data import Dataset
from rrt.errors import InvalidValueError, ShapeError
from rrt.hardening import (ProfileReport, harden_ranger, init_hybrid, kd_loss, profile_max, search_ftclipact,
                           threshold_loss_and_grad, train_fitact, train_proact)
from rrt.metrics import top1_accuracy
from rrt.optim import TrainConfig


def eye_net():
    layers = [engine.dense(2, 2), engine.activation(), engine.dense(2, 2)]
    params = [{"weight": np.eye(2), "bias": np.zeros(2)}, {}, {"weight": np.eye(2), "bias": np.zeros(2)}]
    return model.Network(layers, params, (2,), 2, "eye")


def test_profile_identity_example():
    rep = profile_max(eye_net(), Dataset(np.array([[3.0, -2.0]]), np.array([0]), 2))
    np.testing.assert_array_equal(rep.layer_max, [3.0])
    np.testing.assert_array_equal(rep.neuron_max[0], [3.0, 0.0])
    assert rep.samples == 1


def test_profile_zero_stream():
    layers = [engine.dense(4, 5), engine.activation(), engine.dense(5, 3), engine.activation(), engine.dense(3, 2)]
    net = model.Network(layers, model.init_params(layers, (4,), 1), (4,), 2)
    rep = profile_max(net, Dataset(np.zeros((9, 4)), np.zeros(9, np.int64), 2), neuron_wise=True)
    assert not rep.layer_max.any() and not any(v.any() for v in rep.neuron_max.values())


def test_profile_matches_brute_force():
    net = model.lenet5(seed=2)
    x = np.random.default_rng(0).uniform(size=(23, 1, 28, 28)).astype(np.float32)
    rep = profile_max(net, Dataset(x, np.zeros(23, np.int64)), neuron_wise=True, batch_size=7)
    layer, neuron = brute_force_maxima(net, x)
    np.testing.assert_allclose(rep.layer_max, layer, rtol=1e-12, atol=0)
    # the maximum is exact; only the per-sample vs batched matmul rounding differs
    for i in neuron:
        np.testing.assert_allclose(rep.neuron_max[i], neuron[i], rtol=1e-12, atol=0)


def test_profile_empty():
    with pytest.raises(InvalidValueError):
        profile_max(eye_net(), Dataset(np.zeros((0, 2)), np.zeros(0, np.int64), 2))


def test_ranger_uses_maxima():
    net = tiny_mlp((3, 4, 5, 2))
    rep = ProfileReport(np.array([3.0, 0.0]), {1: np.array([1, 0, 2, 0, 4.0])}, 10)
    ts = harden_ranger(net, rep)
    assert ts.values == {0: 3.0, 1: MIN_THRESHOLD} and ts.policy == "clipped_relu"
    with pytest.raises(InvalidValueError):
        harden_ranger(net, rep, "neuron")
    with pytest.raises(InvalidValueError):
        harden_ranger(net, rep, "channel")


@pytest.mark.parametrize("granularity", ["layer", "neuron"])
def test_ranger_is_lossless_on_profiling_set(toy, granularity):
    net, data = toy
    ts = harden_ranger(net, profile_max(net, data, neuron_wise=True), granularity)
    np.testing.assert_array_equal(model.forward(net, ts, data.images), model.forward(net, None, data.images))


def test_hybrid_initialization(toy):
    net, data = toy
    rep = profile_max(net, data)
    ts = init_hybrid(net, rep, 10.0)
    assert ts.is_hybrid and ts.policy == "hyrelu"
    assert ts.per_layer == {0: rep.layer_max[0], 1: rep.layer_max[1]}
    np.testing.assert_array_equal(ts.last_layer, np.maximum(rep.neuron_max[2], MIN_THRESHOLD))


def step_data():
    x = np.array([[0.25, 0.0625], [0.5, 0.0625], [2.0, 0.0]], dtype=np.float32)
    return Dataset(x, np.zeros(3, np.int64), 2)


def test_ftclipact_picks_smallest_lossless_point():
    ts = search_ftclipact(eye_net(), step_data(), fi_budget=0, grid_size=20, tolerance=0.0)
    assert ts.values[0] == 0.5


def test_ftclipact_full_tolerance_picks_smallest_point():
    ts = search_ftclipact(eye_net(), step_data(), fi_budget=0, grid_size=20, tolerance=1.0)
    assert ts.values[0] == pytest.approx(2.0 / 20)


def test_ftclipact_with_injection_stays_below_max(toy):
    net, data = toy
    rep = profile_max(net, data)
    ts = search_ftclipact(net, data.head(100), fi_budget=3, grid_size=5, ber=1e-3, report=rep)
    assert ts.policy == "clipped_relu"
    assert all(ts.values[i] <= max(rep.layer_max[i], MIN_THRESHOLD) for i in ts.values)


def test_ftclipact_empty_grid():
    with pytest.raises(InvalidValueError):
        search_ftclipact(eye_net(), step_data(), grid_size=0)


def test_kd_identical_logits_zero_kl():
    z = np.array([[9.0, 0.0, -3.0], [0.0, 12.0, 1.0]])
    _, _, terms = kd_loss(z, z.copy(), np.array([0, 1]), [], 4.0, 0.0, return_terms=True)
    assert terms["kl"] == 0.0


def test_kd_regularizer_arithmetic():
    z = np.array([[1000.0, 0.0]])
    loss, _ = kd_loss(z, z, np.array([0]), np.array([2.0, 3.0]), 1.0, 1.0)
    assert loss == 13.0


def test_kd_gradient_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n, c = rng.integers(1, 5), rng.integers(2, 7)
        zs, zt = rng.normal(0, 3, size=(2, n, c))
        y = rng.integers(0, c, size=n)
        T = rng.uniform(0.5, 8)
        _, g = kd_loss(zs, zt, y, [1.0], T, 0.1)
        num = central_diff(lambda v: kd_loss(v, zt, y, [1.0], T, 0.1)[0], zs, 1e-5)
        worst = max(worst, rel_err(g, num))
    assert worst <= 1e-5


@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20)), arrays(np.float64, (3, 4), elements=st.floats(-20, 20)),
       st.floats(0.1, 10), st.floats(0, 1))
def test_kd_at_least_cross_entropy(zs, zt, T, gamma):
    y = np.array([0, 1, 3])
    loss, _, terms = kd_loss(zs, zt, y, np.ones(2), T, gamma, return_terms=True)
    assert terms["kl"] >= -1e-12
    assert loss >= terms["ce"] - 1e-12


def test_kd_shape_mismatch():
    with pytest.raises(ShapeError):
        kd_loss(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros(2, np.int64), [], 1.0, 0.0)


def full_loss(net, ts, x, zt, y, cfg_T, gamma, layers):
    lam = np.concatenate([np.atleast_1d(ts.values[l]).ravel() for l in layers])
    return kd_loss(model.forward(net, ts, x), zt, y, lam, cfg_T, gamma)[0]


@pytest.mark.parametrize("layer", [0, 1, 2])
def test_threshold_gradient_through_network(toy, layer):
    net, data = toy
    init = init_hybrid(net, profile_max(net, data), 10.0)
    ts = init.with_flat(init.flat() * 0.6, validate=True)
    x, y = data.images[:40].astype(np.float64), data.labels[:40]
    zt = model.forward(net, None, x)
    _, grads = threshold_loss_and_grad(net, ts, x, zt, y, [layer], 4.0, 0.01)

    def f(v):
        moved = ts.replace(layer, float(v) if np.ndim(v) == 0 else v.copy())
        return full_loss(net, moved, x, zt, y, 4.0, 0.01, [layer])

    num = central_diff(f, np.asarray(ts.values[layer]), 1e-5)
    assert rel_err(grads[layer], num) <= 1e-4


def test_threshold_gradient_lenet_scalar_layer():
    net = model.lenet5(seed=6)
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(6, 1, 28, 28))
    y = rng.integers(0, 10, size=6)
    rep = profile_max(net, Dataset(x.astype(np.float32), y))
    ts = init_hybrid(net, rep, 10.0)
    ts = ts.with_flat(ts.flat() * 0.5, validate=True)
    zt = model.forward(net, None, x)
    for layer in (1, 3):
        _, grads = threshold_loss_and_grad(net, ts, x, zt, y, [layer], 4.0, 1e-4)
        lam = np.atleast_1d(ts.values[layer])
        scalar = np.ndim(ts.values[layer]) == 0

        def f(v):
            full = lam.copy()
            full[:len(v)] = v
            moved = ts.replace(layer, float(full[0]) if scalar else full)
            return full_loss(net, moved, x, zt, y, 4.0, 1e-4, [layer])

        num = central_diff(f, lam[:5], 1e-5)
        assert rel_err(np.atleast_1d(grads[layer])[:5], num) <= 1e-4


def quick_cfg(**kw):
    base = dict(epochs_last_layer=3, epochs_other_layers=2, batch_size=64, learning_rate=0.05, seed=1)
    return TrainConfig(**(base | kw))


def test_proact_progressive_isolation(toy, monkeypatch):
    net, data = toy
    blocks = []
    inner = hardening._train_block

    def spy(net_, ts, layers, *args, **kw):
        out = inner(net_, ts, layers, *args, **kw)
        blocks.append((layers, ts, out))
        return out

    monkeypatch.setattr(hardening, "_train_block", spy)
    train_proact(net, net, data, quick_cfg())
    assert [b[0] for b in blocks] == [[2], [1], [0]]
    for layers, before, after in blocks:
        for i in before.values:
            same = np.array_equal(before.values[i], after.values[i])
            assert same == (i not in layers)


def test_granularity_contract(toy):
    net, data = toy
    pro = train_proact(net, net, data, quick_cfg())
    fit = train_fitact(net, net, data, quick_cfg())
    assert pro.is_hybrid and pro.count == 2 + 8
    assert len(pro.per_layer) == 2 and pro.last_layer.size == 8
    assert fit.count == sum(net.neuron_counts) == 36 and fit.policy == "fitact_neuronwise"


def test_zero_epochs_is_identity(toy):
    net, data = toy
    zero = quick_cfg(epochs_last_layer=0, epochs_other_layers=0)
    init = init_hybrid(net, profile_max(net, data), zero.slope_k)
    assert train_proact(net, net, data, zero) == init
    fit_init = hardening.init_neuronwise(net, profile_max(net, data, neuron_wise=True), zero.slope_k)
    assert train_fitact(net, net, data, zero) == fit_init


def test_fitact_loss_decreases(toy):
    net, data = toy
    rows = []
    train_fitact(net, net, data, quick_cfg(epochs_last_layer=6), log_rows=rows)
    losses = [r[2] for r in rows]
    assert losses[-1] <= losses[0]


def test_fitact_strong_regularization_shrinks(toy):
    net, data = toy
    init = hardening.init_neuronwise(net, profile_max(net, data, neuron_wise=True), 10.0)
    out = train_fitact(net, net, data, quick_cfg(gamma=1e3), init=init)
    assert out.flat().mean() < init.flat().mean()


def test_proact_keeps_accuracy_and_shrinks(toy):
    net, data = toy
    init = init_hybrid(net, profile_max(net, data), 10.0)
    out = train_proact(net, net, data, quick_cfg(gamma=1e-2), init=init)
    assert top1_accuracy(net, out, data) >= top1_accuracy(net, None, data) - 0.02
    assert np.all(out.flat() >= MIN_THRESHOLD)


def test_teacher_mismatch(toy):
    net, data = toy
    other = net.copy()
    other.params[0]["bias"] = other.params[0]["bias"] + 1
    with pytest.raises(ShapeError):
        train_proact(net, other, data, quick_cfg())


def test_log_csv_header():
    text = hardening.log_csv([(0, "3", 1.0, 0.5, 0.25, 0.25, 2.0)])
    assert text.splitlines() == ["epoch,layer_index,loss,kl_term,ce_term,reg_term,mean_lambda", "0,3,1.0,0.5,0.25,0.25,2.0"]
