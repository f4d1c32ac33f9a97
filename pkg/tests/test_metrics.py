import numpy as np
import pytest

from oracles import tiny_mlp
from rrt import engine, model
from rrt.activation import ThresholdSet
from rrt.data import Dataset
from rrt.errors import InvalidValueError, ShapeError
from rrt.faultinject import CampaignConfig, FaultPlan, FaultSpace, plan_faults, run_campaign
from rrt.metrics import (ResilienceSummary, activation_histograms, dump_activation_histogram, l2_activation_distance,
                         l2_distance, memory_overhead, top1_accuracy)


def linear(n_in, n_out, w, b):
    layers = [engine.dense(n_in, n_out)]
    return model.Network(layers, [{"weight": np.asarray(w, float), "bias": np.asarray(b, float)}], (n_in,), n_out)


def test_top1_perfect_oracle():
    y = np.arange(40) % 4
    data = Dataset(np.eye(4)[y], y, 4)
    assert top1_accuracy(linear(4, 4, np.eye(4), np.zeros(4)), None, data) == 1.0


def test_top1_constant_classifier_on_balanced_data():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=2000)
    data = Dataset(rng.normal(size=(2000, 3)), y, 2)
    acc = top1_accuracy(linear(3, 2, np.zeros((2, 3)), [0.3, 0.1]), None, data)
    assert abs(acc - 0.5) <= 3 * np.sqrt(0.25 / 2000)


def test_top1_empty():
    with pytest.raises(InvalidValueError):
        top1_accuracy(linear(2, 2, np.eye(2), np.zeros(2)), None, Dataset(np.zeros((0, 2)), np.zeros(0, np.int64), 2))


def million_param_net():
    """11 hidden activation layers (the last has 100 neurons) and exactly 10^6 parameters."""
    layers = [engine.dense(8888, 100), engine.activation()]
    for _ in range(10):
        layers += [engine.dense(100, 100), engine.activation()]
    layers.append(engine.dense(100, 100))
    params = [{k: np.zeros(s, np.float32) for k, s in l.param_shapes().items()} for l in layers]
    return model.Network(layers, params, (8888,), 100)


def test_memory_overhead_arithmetic():
    net = million_param_net()
    assert net.param_count == 10**6
    ts = ThresholdSet({**{i: 1.0 for i in range(10)}, 10: np.ones(100)}, last_index=10)
    assert memory_overhead(net, ts) == pytest.approx(1.1e-4, rel=1e-12)


def test_neuronwise_overhead_dominates(toy):
    net, _ = toy
    hybrid = ThresholdSet({0: 1.0, 1: 1.0, 2: np.ones(8)}, last_index=2)
    full = ThresholdSet({i: np.ones(n) for i, n in enumerate(net.neuron_counts)}, last_index=2)
    assert memory_overhead(net, full) >= memory_overhead(net, hybrid) == 10 / net.param_count


def test_memory_overhead_needs_params():
    net = model.Network([engine.flatten()], [{}], (2, 1), 2)
    with pytest.raises(InvalidValueError):
        memory_overhead(net, ThresholdSet({0: 1.0}, last_index=0))


def test_l2_single_neuron():
    assert l2_distance([np.array([[3.0]])], [np.array([[1.0]])]) == 4.0


def test_l2_layer_normalization():
    # layer 0: two neurons, gaps 2 and 0 -> 2; layer 1: one neuron, gap 1 -> 1; mean 1.5
    assert l2_distance([np.array([[2.0, 5.0]]), np.array([[1.0]])],
                       [np.array([[0.0, 5.0]]), np.array([[0.0]])]) == 1.5


def test_l2_shape_mismatch():
    with pytest.raises(ShapeError):
        l2_distance([np.zeros((1, 2))], [np.zeros((1, 3))])


def test_l2_empty_plan_is_zero(toy):
    net, data = toy
    ts = ThresholdSet({0: 5.0, 1: 5.0, 2: np.full(8, 5.0)}, last_index=2)
    empty = FaultPlan(np.zeros(0, np.int64), np.zeros(0, np.int64))
    assert l2_activation_distance(net, ts, empty, data.head(50)) == 0.0


def test_l2_positive_under_faults(toy):
    net, data = toy
    plan = plan_faults(FaultSpace(net, None), 1e-2, 3)
    assert l2_activation_distance(net, None, plan, data.head(50)) > 0


def test_histogram_matches_numpy(toy):
    net, data = toy
    sub = data.head(64)
    hists = activation_histograms(net, None, sub, bins=8, range_split=1.0, batch_size=10)
    acts = model.activations(net, None, sub.images)
    for i, a in enumerate(acts):
        v = a.ravel()
        rows = hists[i]
        assert len(rows) == 16 and sum(c for *_, c in rows) == v.size
        low = np.histogram(v[v <= 1.0], bins=np.linspace(0, 1, 9))[0]
        np.testing.assert_array_equal([c for *_, c in rows[:8]], low)
        hi_edges = np.linspace(1.0, max(v.max(), 1.0) if v.max() > 1 else 2.0, 9)
        np.testing.assert_array_equal([c for *_, c in rows[8:]], np.histogram(v[v > 1.0], bins=hi_edges)[0])


def test_histogram_under_faults_conserves_counts(toy, tmp_path):
    net, data = toy
    plan = plan_faults(FaultSpace(net, None), 1e-3, 0)
    paths = dump_activation_histogram(net, None, data.head(30), tmp_path, plan=plan, bins=5)
    assert [p.name for p in paths] == ["layer0.csv", "layer1.csv", "layer2.csv"]
    for p, n in zip(paths, net.neuron_counts):
        lines = p.read_text().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count" and len(lines) == 11
        assert sum(int(l.split(",")[2]) for l in lines[1:]) == 30 * n


def test_histogram_bins_validated(toy):
    net, data = toy
    with pytest.raises(InvalidValueError):
        activation_histograms(net, None, data.head(4), bins=0)


def test_resilience_summary_drop():
    net = tiny_mlp((3, 4, 2))
    rng = np.random.default_rng(1)
    data = Dataset(rng.normal(size=(40, 3)), rng.integers(0, 2, size=40), 2)
    res = run_campaign(net, None, CampaignConfig(bers=(1e-3, 1e-2), trials=4), data, label="plain")
    s = ResilienceSummary.from_campaign(res, 0.9)
    assert s.method == "plain"
    for row in s.rows:
        assert row["drop"] == pytest.approx(0.9 - row["mean"])
