"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from rrt import engine
from rrt.engine import LayerSpec


def central_diff(f, x, h):
    """Numerical gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-10:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / scale)


def spaced(rng, shape, step=0.01):
    """Random tensor whose entries are pairwise at least ``step`` apart (no pooling ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) - n / 2).reshape(shape) * step + rng.uniform(0, step / 10, size=shape)


def away_from(rng, shape, points, gap=0.02, scale=2.0):
    """Normal samples nudged away from kinks at ``points``."""
    x = rng.normal(0, scale, size=shape)
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.sign(x[close] - p + 1e-12) * gap * 2
    return x


def random_layer_case(kind, rng):
    """(layer, params, x) for a small random instance of ``kind``."""
    n = int(rng.integers(1, 3))
    if kind == "dense":
        i, o = rng.integers(1, 6, size=2)
        layer = engine.dense(int(i), int(o))
        params = {"weight": rng.normal(size=(o, i)), "bias": rng.normal(size=o)}
        return layer, params, rng.normal(size=(n, i))
    if kind == "conv2d":
        c, o = rng.integers(1, 3, size=2)
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        hw = int(rng.integers(k, k + 4))
        layer = engine.conv2d(int(c), int(o), k, stride=s, padding=p)
        params = {"weight": rng.normal(size=(o, c, k, k)), "bias": rng.normal(size=o)}
        return layer, params, rng.normal(size=(n, c, hw, hw))
    if kind in ("maxpool2d", "avgpool2d"):
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, k + 1))
        hw = int(rng.integers(k, k + 4))
        c = int(rng.integers(1, 3))
        layer = LayerSpec(kind, {"kernel_size": k, "stride": s})
        return layer, {}, spaced(rng, (n, c, hw, hw))
    if kind == "flatten":
        return engine.flatten(), {}, rng.normal(size=(n, 2, 3, 2))
    raise ValueError(kind)


def activation_case(policy, rng, neuron_wise=False, k=10.0):
    shape = (int(rng.integers(1, 3)), 4, 3)
    if policy == "relu":
        return engine.activation(), {"policy": "relu"}, away_from(rng, shape, [0.0])
    lam = rng.uniform(0.5, 3.0, size=shape[1:]) if neuron_wise else float(rng.uniform(0.5, 3.0))
    kinks = [0.0] + ([] if neuron_wise else [lam])
    x = away_from(rng, shape, kinks)
    if neuron_wise and policy == "clipped_relu":
        close = np.abs(x - lam) < 0.02
        x[close] += 0.05
    return engine.activation(), {"policy": policy, "lambda": lam, "k": k}, x


def layer_gradient_errors(layer, params, x, rng, h=1e-3):
    """Relative errors of layer_backward vs central differences (input and every parameter)."""
    out = engine.layer_forward(layer, params, x)
    g_out = rng.normal(size=out.shape)

    def loss_x(xv):
        return float((engine.layer_forward(layer, params, xv) * g_out).sum())

    gx, gp = engine.layer_backward(layer, params, x, g_out)
    errs = {"input": rel_err(gx, central_diff(loss_x, x, h))}
    for name, value in params.items():
        if name not in gp:
            continue

        def loss_p(pv, name=name):
            return float((engine.layer_forward(layer, dict(params, **{name: pv}), x) * g_out).sum())

        errs[name] = rel_err(np.reshape(gp[name], np.shape(value)), central_diff(loss_p, value, h))
    return errs


def brute_force_maxima(net, images):
    """Dump every activation of every sample, then take maxima."""
    from rrt import model

    dumps = [[] for _ in net.activation_positions]
    for x in images:
        for i, a in enumerate(model.activations(net, None, x[None])):
            dumps[i].append(a.reshape(-1))
    layer = np.array([np.concatenate(d).max() for d in dumps])
    neuron = {i: np.stack(d).max(axis=0) for i, d in enumerate(dumps)}
    return layer, neuron


def tiny_mlp(sizes=(3, 4, 2), seed=0, dtype=np.float64):
    """Dense/ReLU stack with random weights and biases."""
    from rrt import model

    rng = np.random.default_rng(seed)
    layers, params = [], []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i:
            layers.append(engine.activation())
            params.append({})
        layers.append(engine.dense(a, b))
        params.append({"weight": rng.normal(size=(b, a)).astype(dtype), "bias": rng.normal(size=b).astype(dtype)})
    return model.Network(layers, params, (sizes[0],), sizes[-1], "mlp")
