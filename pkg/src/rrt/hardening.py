"""Activation-restriction methods that pick clipping thresholds.

* Ranger: thresholds are the profiled activation maxima (hard clip).
* FT-ClipAct: per-layer grid search scored by fault injection (hard clip).
* FitAct: every neuron-wise threshold trained jointly (smooth clip).
* ProAct: hybrid thresholds trained one layer at a time, last layer first,
  by distilling the unbounded ReLU teacher into the clipped student.

Network weights are never modified here.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import engine, model
from .activation import MIN_THRESHOLD, ThresholdSet
from .engine import log_softmax_temperature
from .errors import DivergenceError, InvalidValueError, ShapeError
from .faultinject import FaultSpace, apply_faults, plan_faults, trial_seed
from .metrics import top1_accuracy
from .optim import Adam

log = logging.getLogger(__name__)

LOG_HEADER = ("epoch", "layer_index", "loss", "kl_term", "ce_term", "reg_term", "mean_lambda")
# pre-activation caches above this size are recomputed per batch instead
CACHE_BYTES = 1 << 30


@dataclass
class ProfileReport:
    layer_max: np.ndarray  # (n_activation_layers,)
    neuron_max: dict  # activation ordinal -> flat per-neuron maxima
    samples: int


def profile_max(net, data, neuron_wise=False, batch_size=256):
    """Running maxima of every activation layer's ReLU output over ``data``.

    Per-neuron maxima are always kept for the final hidden layer; with
    ``neuron_wise=True`` they are kept for every layer.
    """
    if len(data) == 0:
        raise InvalidValueError("cannot profile on an empty dataset")
    n_layers = len(net.activation_positions)
    if n_layers == 0:
        raise ShapeError("network has no activation layers to profile")
    last = net.last_hidden
    keep = range(n_layers) if neuron_wise else [last]
    layer_max = np.zeros(n_layers)
    neuron_max = {i: np.zeros(net.neuron_counts[i]) for i in keep}
    for s in range(0, len(data), batch_size):
        acts = model.activations(net, None, data.images[s:s + batch_size])
        for i, a in enumerate(acts):
            flat = a.reshape(len(a), -1)
            layer_max[i] = max(layer_max[i], flat.max())
            if i in neuron_max:
                np.maximum(neuron_max[i], flat.max(axis=0), out=neuron_max[i])
    return ProfileReport(layer_max, neuron_max, len(data))


def _floor(v):
    return np.maximum(v, MIN_THRESHOLD)


def harden_ranger(net, report, granularity="layer"):
    """Hard-clip thresholds equal to the profiled maxima (floored at 2^-16)."""
    last = net.last_hidden
    n_layers = len(report.layer_max)
    if granularity == "layer":
        values = {i: float(_floor(report.layer_max[i])) for i in range(n_layers)}
    elif granularity == "neuron":
        missing = [i for i in range(n_layers) if i not in report.neuron_max]
        if missing:
            raise InvalidValueError(f"report lacks per-neuron maxima for layers {missing}; "
                                    "profile with neuron_wise=True")
        values = {i: _floor(report.neuron_max[i]) for i in range(n_layers)}
    else:
        raise InvalidValueError(f"granularity must be 'layer' or 'neuron', got {granularity!r}")
    return ThresholdSet(values, last, policy="clipped_relu")


def init_hybrid(net, report, k):
    """Layer-wise maxima everywhere except neuron-wise maxima at the final hidden layer."""
    last = net.last_hidden
    values = {i: float(_floor(m)) for i, m in enumerate(report.layer_max) if i != last}
    values[last] = _floor(report.neuron_max[last])
    return ThresholdSet(values, last, k=k, policy="hyrelu")


def init_neuronwise(net, report, k):
    values = {i: _floor(report.neuron_max[i]) for i in range(len(report.layer_max))}
    return ThresholdSet(values, net.last_hidden, k=k, policy="fitact_neuronwise")


# ---------------------------------------------------------------- FT-ClipAct


def search_ftclipact(net, data, fi_budget=10, grid_size=20, ber=1e-5, tolerance=0.005, seed=0,
                     report=None, batch_size=256):
    """Layer-wise interval search, first layer to last.

    For each layer the candidates are ``grid_size`` evenly spaced values in
    (0, profiled max]. A candidate is admissible if fault-free accuracy stays
    within ``tolerance`` (absolute) of the unclipped network; admissible
    candidates are ranked by mean accuracy over ``fi_budget`` fault-injection
    trials (the same plans for every candidate), ties going to the smaller
    threshold. With ``fi_budget=0`` the smallest admissible value wins.
    """
    if grid_size < 1:
        raise InvalidValueError("grid_size must be >= 1")
    if report is None:
        report = profile_max(net, data, batch_size=batch_size)
    base = top1_accuracy(net, None, data, batch_size)
    ts = harden_ranger(net, report, "layer")
    for layer in range(len(report.layer_max)):
        top = ts.values[layer]
        grid = top * (np.arange(1, grid_size + 1) / grid_size)
        best, best_score = top, -np.inf
        for cand in grid:
            trial_ts = ts.replace(layer, float(cand))
            if top1_accuracy(net, trial_ts, data, batch_size) < base - tolerance:
                continue
            score = 0.0
            if fi_budget > 0:
                space = FaultSpace(net, trial_ts)
                accs = []
                for t in range(fi_budget):
                    plan = plan_faults(space, ber, trial_seed(seed, layer, t))
                    accs.append(top1_accuracy(*apply_faults(net, trial_ts, plan), data, batch_size))
                score = float(np.mean(accs))
            if score > best_score:
                best, best_score = float(cand), score
        ts = ts.replace(layer, best)
        log.info("ft-clipact layer %d: lambda %.4g (max %.4g) score %.4f", layer, best, top, best_score)
    ts.validate()
    return ts


# ---------------------------------------------------------------- distillation loss


def kd_loss(student_logits, teacher_logits, labels, lam, T, gamma, return_terms=False):
    """KL(P_s || P_t) at temperature ``T`` + cross-entropy at T=1 + gamma * sum(lam^2).

    KL and cross-entropy are averaged over the batch. Returns ``(loss,
    grad)`` with ``grad`` the gradient w.r.t. ``student_logits``; with
    ``return_terms`` also a dict of the three loss components.
    """
    zs = np.asarray(student_logits, dtype=np.float64)
    zt = np.asarray(teacher_logits, dtype=np.float64)
    if zs.shape != zt.shape or zs.ndim != 2 or len(labels) != len(zs):
        raise ShapeError(f"logit shapes {zs.shape} / {zt.shape} and {len(labels)} labels do not match")
    if not T > 0:
        raise InvalidValueError("temperature must be positive")
    if gamma < 0:
        raise InvalidValueError("gamma must be >= 0")
    n = len(zs)
    log_ps = log_softmax_temperature(zs, T)
    log_pt = log_softmax_temperature(zt, T)
    ps = np.exp(log_ps)
    diff = log_ps - log_pt
    kl_each = (ps * diff).sum(axis=1)
    kl = kl_each.mean()
    grad_kl = ps * (diff - kl_each[:, None]) / T

    log_p1 = log_softmax_temperature(zs, 1.0)
    rows = np.arange(n)
    ce = -log_p1[rows, labels].mean()
    grad_ce = np.exp(log_p1)
    grad_ce[rows, labels] -= 1.0

    lam = np.asarray(lam, dtype=np.float64)
    reg = gamma * float((lam * lam).sum())
    loss = kl + ce + reg
    grad = (grad_kl + grad_ce) / n
    if return_terms:
        return loss, grad, {"kl": float(kl), "ce": float(ce), "reg": reg}
    return loss, grad


# ---------------------------------------------------------------- threshold training


def _prefix(net, bound, images, stop, batch_size=256):
    """Input of layer ``stop`` for every sample (layers before it are frozen)."""
    outs = []
    for s in range(0, len(images), batch_size):
        x = np.asarray(images[s:s + batch_size], dtype=np.float64)
        for i in range(stop):
            x = engine.layer_forward(net.layers[i], bound[i], x)
        outs.append(x)
    return np.concatenate(outs)


def threshold_loss_and_grad(net, thresholds, x, teacher_logits, labels, layers, T, gamma):
    """Loss and its gradient w.r.t. the thresholds of activation ``layers``.

    Gradients flow through every layer downstream of the first trainable
    one. Returns ``(loss, {ordinal: grad shaped like the stored value})``.
    """
    bound = net.bind(thresholds)
    start = net.activation_positions[min(layers)]
    xs = _prefix(net, bound, x, start, batch_size=len(x))
    out, cache = model.run_layers(net, bound, xs, start=start, record=True)
    lam = np.concatenate([np.atleast_1d(thresholds.values[l]).ravel() for l in layers])
    loss, g, _ = kd_loss(out, teacher_logits, labels, lam, T, gamma, return_terms=True)
    _, grads = model.backward_layers(net, bound, cache, g, start=start)
    result = {}
    for l in layers:
        v = thresholds.values[l]
        gl = np.asarray(grads[net.activation_positions[l]]["lambda"], dtype=np.float64)
        result[l] = (float(gl) if isinstance(v, float) else gl.ravel()) + 2 * gamma * v
    return loss, result


def _train_block(net, thresholds, layers, data, teacher_logits, epochs, cfg, rng, log_rows, tag):
    """Adam on the thresholds of ``layers`` only; everything else stays fixed."""
    if epochs == 0:
        return thresholds
    positions = [net.activation_positions[l] for l in layers]
    start = positions[0] if len(layers) == 1 else min(positions)
    work = thresholds.copy()
    bound = net.bind(work)
    trainable = []
    for l, pos in zip(layers, positions):
        v = work.values[l]
        arr = np.array(v, dtype=np.float64)
        if arr.ndim:
            arr = arr.reshape(net.shapes[pos])
        bound[pos] = dict(bound[pos], **{"lambda": arr})
        trainable.append(arr)
    fixed_bytes = len(data) * int(np.prod(net.shapes[start])) * 8
    pre = _prefix(net, bound, data.images, start) if fixed_bytes <= CACHE_BYTES else None
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    T, gamma = cfg.temperature, cfg.gamma
    for epoch in range(epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(data))
        sums = np.zeros(4)
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x = pre[idx] if pre is not None else _prefix(net, bound, data.images[idx], start, len(idx))
            out, cache = model.run_layers(net, bound, x, start=start, record=True)
            lam = np.concatenate([a.ravel() for a in trainable])
            loss, g, terms = kd_loss(out, teacher_logits[idx], data.labels[idx], lam, T, gamma, return_terms=True)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, f"non-finite loss at epoch {epoch} while training layer(s) {tag}")
            _, grads = model.backward_layers(net, bound, cache, g, start=start)
            lam_grads = [np.asarray(grads[p]["lambda"], dtype=np.float64).reshape(a.shape) + 2 * gamma * a
                         for p, a in zip(positions, trainable)]
            opt.step(trainable, lam_grads, lr)
            for a in trainable:
                np.maximum(a, MIN_THRESHOLD, out=a)
            sums += len(idx) * np.array([loss, terms["kl"], terms["ce"], terms["reg"]])
        sums /= len(data)
        mean_lam = float(np.mean(np.concatenate([a.ravel() for a in trainable])))
        if log_rows is not None:
            log_rows.append((epoch, tag, *sums.tolist(), mean_lam))
        log.info("layer %s epoch %d lr %.4g loss %.5f mean lambda %.4f", tag, epoch, lr, sums[0], mean_lam)
    values = dict(work.values)
    for l, a in zip(layers, trainable):
        values[l] = float(a) if isinstance(work.values[l], float) else a.ravel().copy()
    return ThresholdSet(values, work.last_index, work.k, work.policy)


def _check_pair(net, teacher):
    if not net.same_structure(teacher):
        raise ShapeError("student and teacher must share layers and weights")


def train_proact(net, teacher, data, cfg, init=None, profile_data=None, log_rows=None):
    """Progressive distillation of hybrid HyReLU thresholds.

    ``init`` defaults to the hybrid maxima profiled on ``profile_data`` (or
    ``data``). Layers are trained from the final hidden layer back to the
    first; while a layer trains, every other threshold is held fixed.
    """
    _check_pair(net, teacher)
    if init is None:
        init = init_hybrid(net, profile_max(teacher, data if profile_data is None else profile_data), cfg.slope_k)
    init.check_network(net.neuron_counts)
    if not init.is_hybrid:
        raise InvalidValueError("ProAct expects hybrid thresholds")
    ts = init
    if cfg.epochs_last_layer == 0 and cfg.epochs_other_layers == 0:
        return ts
    teacher_logits = model.forward(teacher, None, data.images, batch_size=256)
    for layer in range(net.last_hidden, -1, -1):
        epochs = cfg.epochs_last_layer if layer == net.last_hidden else cfg.epochs_other_layers
        rng = np.random.default_rng([cfg.seed, layer])
        ts = _train_block(net, ts, [layer], data, teacher_logits, epochs, cfg, rng, log_rows, str(layer))
    return ts


def train_fitact(net, teacher, data, cfg, init=None, profile_data=None, log_rows=None):
    """Joint training of neuron-wise smooth thresholds on every layer.

    Uses the same distillation loss as :func:`train_proact` for ``cfg.epochs_last_layer`` epochs.
    """
    _check_pair(net, teacher)
    if init is None:
        init = init_neuronwise(net, profile_max(teacher, data if profile_data is None else profile_data, neuron_wise=True), cfg.slope_k)
    init.check_network(net.neuron_counts)
    if cfg.epochs_last_layer == 0:
        return init
    teacher_logits = model.forward(teacher, None, data.images, batch_size=256)
    rng = np.random.default_rng([cfg.seed, 1 << 16])
    layers = list(range(len(net.activation_positions)))
    return _train_block(net, init, layers, data, teacher_logits, cfg.epochs_last_layer, cfg, rng, log_rows, "all")


def log_csv(rows):
    lines = [",".join(LOG_HEADER)]
    for epoch, layer, loss, kl, ce, reg, mean_lam in rows:
        lines.append(f"{epoch},{layer},{loss!r},{kl!r},{ce!r},{reg!r},{mean_lam!r}")
    return "\n".join(lines) + "\n"
