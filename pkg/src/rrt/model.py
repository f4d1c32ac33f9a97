"""Network container, reference architectures, model files and baseline training.

Model files come in pairs: a JSON manifest (``.rrtm``) describing layers and
tensor entries, and a raw blob (``.rrtb``) of little-endian float32 values.
"""
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import engine
from .engine import LayerSpec
from .errors import DivergenceError, FormatError, InvalidValueError, ShapeError, UnsupportedLayerError
from .optim import Adam

log = logging.getLogger(__name__)

FORMAT_NAME = "rrt-model"
FORMAT_VERSION = 1
MANIFEST_SUFFIX = ".rrtm"
BLOB_SUFFIX = ".rrtb"


class Network:
    """An ordered stack of layers with per-layer parameter dicts.

    The final hidden layer (``last_hidden``) is the last activation layer
    before the classifier; activation layers are numbered 0..last_hidden in
    order of appearance, which is how thresholds address them.
    """

    def __init__(self, layers, params, input_shape, num_classes, name="net"):
        self.layers = list(layers)
        self.params = [dict(p) for p in params]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        self.name = name
        if len(self.params) != len(self.layers):
            raise ShapeError("one parameter dict per layer is required")
        self.shapes = [self.input_shape]
        for layer, p in zip(self.layers, self.params):
            for pname, shape in layer.param_shapes().items():
                if pname not in p or tuple(np.shape(p[pname])) != shape:
                    raise ShapeError(f"{layer.kind} parameter {pname!r} must have shape {shape}")
            self.shapes.append(layer.output_shape(self.shapes[-1]))
        if self.shapes[-1] != (self.num_classes,):
            raise ShapeError(f"network outputs {self.shapes[-1]}, expected ({self.num_classes},)")
        self.activation_positions = [i for i, l in enumerate(self.layers) if l.kind == "activation"]

    @property
    def last_hidden(self):
        """Ordinal of the final hidden activation layer, or None without activations."""
        return len(self.activation_positions) - 1 if self.activation_positions else None

    @property
    def neuron_counts(self):
        """Neurons (elements per sample) of each activation layer."""
        return [int(np.prod(self.shapes[p])) for p in self.activation_positions]

    @property
    def param_count(self):
        return sum(int(np.size(v)) for p in self.params for v in p.values())

    def param_entries(self):
        """(layer index, name, array) for every weight/bias tensor, in storage order."""
        out = []
        for i, (layer, p) in enumerate(zip(self.layers, self.params)):
            for name in layer.param_shapes():
                out.append((i, name, p[name]))
        return out

    def copy(self):
        return Network(self.layers, [{k: v.copy() for k, v in p.items()} for p in self.params],
                       self.input_shape, self.num_classes, self.name)

    def same_structure(self, other):
        return (self.layers == other.layers and self.input_shape == other.input_shape
                and all(a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
                        for a, b in zip(self.params, other.params)))

    def bind(self, thresholds=None):
        """Per-layer parameter dicts with activation thresholds attached.

        Without thresholds every activation is a plain ReLU (teacher mode).
        """
        bound = list(self.params)
        if thresholds is None:
            return bound
        counts = self.neuron_counts
        if len(thresholds.values) != len(counts):
            raise ShapeError(f"thresholds cover {len(thresholds.values)} layers, network has {len(counts)}")
        for ordinal, pos in enumerate(self.activation_positions):
            if ordinal not in thresholds.values:
                raise InvalidValueError(f"missing thresholds for activation layer {ordinal}")
            lam = thresholds.values[ordinal]
            if not isinstance(lam, float):
                if lam.size != counts[ordinal]:
                    raise ShapeError(f"layer {ordinal}: {lam.size} thresholds for {counts[ordinal]} neurons")
                lam = lam.reshape(self.shapes[pos])
            bound[pos] = {"policy": thresholds.policy, "lambda": lam, "k": thresholds.k}
        return bound

    def __repr__(self):
        kinds = ",".join(l.kind for l in self.layers)
        return f"Network({self.name!r}, {self.input_shape}->{self.num_classes}, [{kinds}])"


# ---------------------------------------------------------------- execution


def run_layers(net, bound, x, start=0, record=False):
    """Forward from layer ``start``; optionally keep every layer's input."""
    cache = []
    for i in range(start, len(net.layers)):
        if record:
            cache.append(x)
        x = engine.layer_forward(net.layers[i], bound[i], x)
    return x, cache


def backward_layers(net, bound, cache, grad, start=0, need_params=False):
    """Backpropagate ``grad`` from the logits down to the input of layer ``start``.

    ``cache`` comes from ``run_layers(..., start=start, record=True)``.
    Returns the input gradient and ``{layer index: {param: grad}}``.
    """
    grads = {}
    for i in range(len(net.layers) - 1, start - 1, -1):
        layer = net.layers[i]
        want = need_params or layer.kind == "activation"
        grad, g = engine.layer_backward(layer, bound[i], cache[i - start], grad, need_params=want)
        if g:
            grads[i] = g
    return grad, grads


def forward(net, thresholds, batch, batch_size=None):
    """Logits for ``batch``; ``thresholds=None`` runs the plain-ReLU teacher."""
    batch = np.asarray(batch)
    if tuple(batch.shape[1:]) != net.input_shape:
        raise ShapeError(f"batch samples have shape {batch.shape[1:]}, network expects {net.input_shape}")
    bound = net.bind(thresholds)
    if batch_size is None or len(batch) <= batch_size:
        return run_layers(net, bound, batch)[0]
    return np.concatenate([run_layers(net, bound, batch[i:i + batch_size])[0]
                           for i in range(0, len(batch), batch_size)])


def activations(net, thresholds, batch):
    """Outputs of every activation layer, in activation order."""
    bound = net.bind(thresholds)
    x = np.asarray(batch, dtype=np.float64)
    outs = []
    for i, layer in enumerate(net.layers):
        x = engine.layer_forward(layer, bound[i], x)
        if layer.kind == "activation":
            outs.append(x)
    return outs


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logp = engine.log_softmax_temperature(logits, 1.0)
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------- builders


def init_params(layers, input_shape, seed=0):
    """He-uniform weights, zero biases, stored as float32."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in layers:
        p = {}
        shapes = layer.param_shapes()
        if shapes:
            wshape = shapes["weight"]
            fan_in = int(np.prod(wshape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            p["weight"] = rng.uniform(-bound, bound, size=wshape).astype(np.float32)
            p["bias"] = np.zeros(shapes["bias"], dtype=np.float32)
        params.append(p)
    return params


def lenet5(seed=0, num_classes=10):
    """LeNet-5 style net for 1x28x28 inputs: two conv blocks and three dense layers."""
    layers = [
        engine.conv2d(1, 6, 5), engine.activation(), engine.maxpool2d(2),
        engine.conv2d(6, 16, 5), engine.activation(), engine.maxpool2d(2),
        engine.flatten(),
        engine.dense(256, 120), engine.activation(),
        engine.dense(120, 84), engine.activation(),
        engine.dense(84, num_classes),
    ]
    return Network(layers, init_params(layers, (1, 28, 28), seed), (1, 28, 28), num_classes, "lenet5")


def minialex(seed=0, num_classes=10):
    """Three conv blocks and two dense layers for 3x32x32 inputs."""
    layers = [
        engine.conv2d(3, 16, 3, padding=1), engine.activation(), engine.maxpool2d(2),
        engine.conv2d(16, 32, 3, padding=1), engine.activation(), engine.maxpool2d(2),
        engine.conv2d(32, 64, 3, padding=1), engine.activation(), engine.maxpool2d(2),
        engine.flatten(),
        engine.dense(1024, 128), engine.activation(),
        engine.dense(128, num_classes),
    ]
    return Network(layers, init_params(layers, (3, 32, 32), seed), (3, 32, 32), num_classes, "minialex")


ARCHITECTURES = {"lenet5": lenet5, "minialex": minialex}


def build(arch, seed=0):
    try:
        return ARCHITECTURES[arch](seed=seed)
    except KeyError:
        raise InvalidValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None


# ---------------------------------------------------------------- files


def _paths(path):
    path = Path(path)
    if path.suffix in (MANIFEST_SUFFIX, BLOB_SUFFIX):
        path = path.with_suffix("")
    return path.with_name(path.name + MANIFEST_SUFFIX), path.with_name(path.name + BLOB_SUFFIX)


def save_model(net, path):
    """Write ``<path>.rrtm`` and ``<path>.rrtb``; returns the manifest path."""
    manifest_path, blob_path = _paths(path)
    chunks, tensors, offset = [], [], 0
    for i, name, arr in net.param_entries():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": f"{i}.{name}", "layer": i, "param": name, "shape": list(np.shape(arr)),
                        "dtype": "<f4", "offset": offset, "length": len(data)})
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": net.name,
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "layers": [{"kind": l.kind, **{k: v for k, v in l.hp.items() if k != "policy"}} for l in net.layers],
        "tensors": tensors,
        "blob": blob_path.name,
        "blob_length": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest_path


def load_model(path):
    manifest_path, _ = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: manifest is not JSON ({exc})") from exc
    try:
        if manifest.get("format") != FORMAT_NAME:
            raise FormatError(f"{manifest_path}: not an {FORMAT_NAME} manifest")
        blob_path = manifest_path.with_name(manifest["blob"])
        blob = blob_path.read_bytes()
        if len(blob) != manifest["blob_length"]:
            raise FormatError(f"{blob_path}: manifest declares {manifest['blob_length']} bytes, file has {len(blob)}")
        layers = []
        for entry in manifest["layers"]:
            entry = dict(entry)
            kind = entry.pop("kind")
            if kind not in engine.LAYER_KINDS:
                raise UnsupportedLayerError(f"unsupported layer kind {kind!r}")
            if kind == "activation":
                entry["policy"] = "relu"
            layers.append(LayerSpec(kind, entry))
        params = [{} for _ in layers]
        for t in manifest["tensors"]:
            start, length = t["offset"], t["length"]
            if start < 0 or start + length > len(blob):
                raise FormatError(f"tensor {t['name']} overruns the blob")
            arr = np.frombuffer(blob[start:start + length], dtype="<f4")
            if arr.size != int(np.prod(t["shape"])):
                raise FormatError(f"tensor {t['name']}: {arr.size} values for shape {t['shape']}")
            params[t["layer"]][t["param"]] = arr.reshape(t["shape"]).astype(np.float32)
        return Network(layers, params, manifest["input_shape"], manifest["num_classes"], manifest.get("name", "net"))
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"{manifest_path}: malformed manifest ({exc!r})") from exc


# ---------------------------------------------------------------- training


def train_baseline(net, data, cfg):
    """Train weights with Adam on cross-entropy; returns a new Network.

    The learning rate follows ``cfg.lr_at(epoch)``. Zero epochs returns an
    unchanged copy.
    """
    if len(data) == 0:
        raise InvalidValueError("cannot train on an empty dataset")
    if any(net.params[p] for p in net.activation_positions):
        raise InvalidValueError("baseline training expects plain ReLU activations")
    net = net.copy()
    work = [{k: v.astype(np.float64) for k, v in p.items()} for p in net.params]
    flat = [work[i][n] for i, n, _ in net.param_entries()]
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(data))
        total, seen = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x = data.images[idx]
            logits, cache = run_layers(net, work, x, record=True)
            loss, grad = cross_entropy(logits, data.labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            _, grads = backward_layers(net, work, cache, grad, need_params=True)
            opt.step(flat, [grads[i][n] for i, n, _ in net.param_entries()], lr)
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
        log.info("epoch %d lr %.5g loss %.5f", epoch, lr, history[-1])
    for p, w in zip(net.params, work):
        for k in p:
            p[k] = w[k].astype(np.float32)
    net.history = history
    return net
