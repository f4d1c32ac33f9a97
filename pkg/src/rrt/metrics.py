"""Accuracy, memory overhead, activation distance and activation histograms."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model
from .errors import InvalidValueError, ShapeError


def top1_accuracy(net, thresholds, data, batch_size=256):
    """Fraction of samples whose arg-max logit equals the label."""
    if len(data) == 0:
        raise InvalidValueError("top-1 accuracy of an empty dataset is undefined")
    bound = net.bind(thresholds)
    correct = 0
    for s in range(0, len(data), batch_size):
        logits = model.run_layers(net, bound, data.images[s:s + batch_size])[0]
        correct += int((logits.argmax(axis=1) == data.labels[s:s + batch_size]).sum())
    return correct / len(data)


def memory_overhead(net, thresholds):
    """Stored threshold values per network parameter (weights + biases).

    For the hybrid layout this is (#layer-wise thresholds + #neurons in the
    final hidden layer) / #parameters. The ratio is returned as-is, not as a
    percentage.
    """
    n = net.param_count
    if n == 0:
        raise InvalidValueError("network has no parameters")
    return thresholds.count / n


def l2_distance(faulty, golden):
    """Mean over samples of the layer-averaged, neuron-averaged squared gap.

    ``faulty`` and ``golden`` are lists (one entry per layer) of arrays
    shaped (n_samples, ...). Each layer is normalized by its own neuron
    count before averaging over layers.
    """
    if len(faulty) != len(golden) or not golden:
        raise ShapeError("faulty and golden runs must cover the same, non-empty set of layers")
    per_layer = []
    for z, f in zip(faulty, golden):
        z, f = np.asarray(z, dtype=np.float64), np.asarray(f, dtype=np.float64)
        if z.shape != f.shape:
            raise ShapeError(f"activation shapes differ: {z.shape} vs {f.shape}")
        per_layer.append(((z - f) ** 2).reshape(len(z), -1).mean(axis=1))
    return float(np.mean(per_layer, axis=0).mean())


def l2_activation_distance(net, thresholds, plan, data, batch_size=256):
    """L2 gap between activations of the fault-free net and the net under ``plan``.

    Flips aimed past the end of this net's fault space (e.g. threshold
    words of a plan drawn for a protected twin) are ignored, so one plan can
    be shared between an unprotected and a protected model.
    """
    from .faultinject import FaultSpace, apply_faults

    space = FaultSpace(net, thresholds)
    fnet, fts = apply_faults(net, thresholds, plan.restrict(space.total_words))
    total, n = 0.0, 0
    for s in range(0, len(data), batch_size):
        x = data.images[s:s + batch_size]
        d = l2_distance(model.activations(fnet, fts, x), model.activations(net, thresholds, x))
        total += d * len(x)
        n += len(x)
    return total / n


def _layer_values(net, thresholds, data, batch_size):
    for s in range(0, len(data), batch_size):
        yield model.activations(net, thresholds, data.images[s:s + batch_size])


def activation_histograms(net, thresholds, data, plan=None, bins=20, range_split=1.0, batch_size=256):
    """Per-layer histograms split into ``[0, range_split]`` and ``(range_split, max]``.

    Returns ``{layer ordinal: [(bin_lo, bin_hi, count), ...]}`` with ``bins``
    rows for each range.
    """
    if bins < 1:
        raise InvalidValueError("bins must be >= 1")
    if plan is not None:
        from .faultinject import apply_faults
        net, thresholds = apply_faults(net, thresholds, plan)
    n_layers = len(net.activation_positions)
    hi = np.full(n_layers, range_split, dtype=np.float64)
    for acts in _layer_values(net, thresholds, data, batch_size):
        for i, a in enumerate(acts):
            hi[i] = max(hi[i], float(a.max()))
    lo_edges = np.linspace(0.0, range_split, bins + 1)
    low = np.zeros((n_layers, bins), dtype=np.int64)
    high = np.zeros((n_layers, bins), dtype=np.int64)
    hi_edges = [np.linspace(range_split, h if h > range_split else range_split + 1.0, bins + 1) for h in hi]
    for acts in _layer_values(net, thresholds, data, batch_size):
        for i, a in enumerate(acts):
            v = a.ravel()
            low[i] += np.histogram(v[v <= range_split], bins=lo_edges)[0]
            high[i] += np.histogram(v[v > range_split], bins=hi_edges[i])[0]
    out = {}
    for i in range(n_layers):
        rows = [(lo_edges[b], lo_edges[b + 1], int(low[i, b])) for b in range(bins)]
        rows += [(hi_edges[i][b], hi_edges[i][b + 1], int(high[i, b])) for b in range(bins)]
        out[i] = rows
    return out


def dump_activation_histogram(net, thresholds, data, out_dir, plan=None, bins=20, range_split=1.0,
                              batch_size=256):
    """Write ``layer<i>.csv`` (bin_lo, bin_hi, count) per activation layer; returns the paths."""
    hists = activation_histograms(net, thresholds, data, plan, bins, range_split, batch_size)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, rows in hists.items():
        p = out_dir / f"layer{i}.csv"
        p.write_text("bin_lo,bin_hi,count\n" + "".join(f"{float(a)!r},{float(b)!r},{c}\n" for a, b, c in rows))
        paths.append(p)
    return paths


@dataclass
class ResilienceSummary:
    method: str
    baseline_top1: float
    rows: list  # dicts with ber, mean, std, ci95_lo, ci95_hi, trials, drop

    @classmethod
    def from_campaign(cls, result, baseline_top1, method=None):
        rows = [dict(r, drop=baseline_top1 - r["mean"]) for r in result.summary()]
        return cls(method or result.label, baseline_top1, rows)
