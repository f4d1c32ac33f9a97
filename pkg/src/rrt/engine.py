"""Dense/conv/pool layer algebra with hand-written backward passes.

Tensors are numpy arrays with a leading batch axis. Parameters may be stored
as float32 but every kernel computes in float64.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import activation as act
from .errors import InvalidValueError, ShapeError

LAYER_KINDS = ("dense", "conv2d", "maxpool2d", "avgpool2d", "flatten", "activation")


@dataclass
class LayerSpec:
    kind: str
    hp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidValueError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self):
        return self.kind in ("dense", "conv2d")

    def output_shape(self, in_shape):
        """Per-sample output shape for a per-sample ``in_shape``."""
        hp = self.hp
        in_shape = tuple(in_shape)
        if self.kind == "dense":
            if in_shape != (hp["in_features"],):
                raise ShapeError(f"dense expects ({hp['in_features']},), got {in_shape}")
            return (hp["out_features"],)
        if self.kind == "conv2d":
            if len(in_shape) != 3 or in_shape[0] != hp["in_channels"]:
                raise ShapeError(f"conv2d expects ({hp['in_channels']}, H, W), got {in_shape}")
            k, s, p = hp["kernel_size"], hp.get("stride", 1), hp.get("padding", 0)
            h = (in_shape[1] + 2 * p - k) // s + 1
            w = (in_shape[2] + 2 * p - k) // s + 1
            if h < 1 or w < 1:
                raise ShapeError(f"conv2d kernel {k} larger than padded input {in_shape}")
            return (hp["out_channels"], h, w)
        if self.kind in ("maxpool2d", "avgpool2d"):
            if len(in_shape) != 3:
                raise ShapeError(f"{self.kind} expects (C, H, W), got {in_shape}")
            k = hp["kernel_size"]
            s = hp.get("stride", k)
            h, w = (in_shape[1] - k) // s + 1, (in_shape[2] - k) // s + 1
            if h < 1 or w < 1:
                raise ShapeError(f"{self.kind} window {k} larger than input {in_shape}")
            return (in_shape[0], h, w)
        if self.kind == "flatten":
            return (int(np.prod(in_shape)),)
        return in_shape

    def param_shapes(self):
        hp = self.hp
        if self.kind == "dense":
            return {"weight": (hp["out_features"], hp["in_features"]), "bias": (hp["out_features"],)}
        if self.kind == "conv2d":
            k = hp["kernel_size"]
            return {"weight": (hp["out_channels"], hp["in_channels"], k, k), "bias": (hp["out_channels"],)}
        return {}


def dense(in_features, out_features):
    return LayerSpec("dense", {"in_features": in_features, "out_features": out_features})


def conv2d(in_channels, out_channels, kernel_size, stride=1, padding=0):
    return LayerSpec("conv2d", {"in_channels": in_channels, "out_channels": out_channels,
                                "kernel_size": kernel_size, "stride": stride, "padding": padding})


def maxpool2d(kernel_size, stride=None):
    return LayerSpec("maxpool2d", {"kernel_size": kernel_size, "stride": stride or kernel_size})


def avgpool2d(kernel_size, stride=None):
    return LayerSpec("avgpool2d", {"kernel_size": kernel_size, "stride": stride or kernel_size})


def flatten():
    return LayerSpec("flatten")


def activation():
    return LayerSpec("activation", {"policy": "relu"})


# ---------------------------------------------------------------- helpers


def _windows(x, k, s):
    """(N, C, H, W) -> (N, C, Ho, Wo, k, k) strided view."""
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def _check_batch(layer, x):
    layer.output_shape(x.shape[1:])  # raises ShapeError on mismatch


def _activation_args(params):
    params = params or {}
    return params.get("policy", "relu"), params.get("lambda"), params.get("k", act.DEFAULT_K)


# ---------------------------------------------------------------- forward


def layer_forward(layer, params, x):
    """Apply ``layer`` to a batch ``x``.

    ``params`` holds ``weight``/``bias`` for dense and conv layers. For an
    activation layer it carries the bound policy: ``policy``, ``lambda``
    (scalar, or array shaped like one sample) and slope ``k``.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_batch(layer, x)
    kind, hp = layer.kind, layer.hp
    if kind == "dense":
        w = np.asarray(params["weight"], dtype=np.float64)
        b = np.asarray(params["bias"], dtype=np.float64)
        return x @ w.T + b
    if kind == "conv2d":
        w = np.asarray(params["weight"], dtype=np.float64)
        b = np.asarray(params["bias"], dtype=np.float64)
        p, s = hp.get("padding", 0), hp.get("stride", 1)
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = _windows(x, hp["kernel_size"], s)
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
        return out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    if kind == "maxpool2d":
        return _windows(x, hp["kernel_size"], hp["stride"]).max(axis=(4, 5))
    if kind == "avgpool2d":
        return _windows(x, hp["kernel_size"], hp["stride"]).mean(axis=(4, 5))
    if kind == "flatten":
        return x.reshape(x.shape[0], -1)
    policy, lam, k = _activation_args(params)
    return act.activation_forward(policy, x, lam, k)


# ---------------------------------------------------------------- backward


def layer_backward(layer, params, x, grad_out, need_params=True):
    """Return ``(grad_in, grad_params)`` for ``layer`` evaluated at ``x``.

    ``grad_params`` maps parameter names to gradients (``lambda`` for
    clipping activations). With ``need_params=False`` weight gradients are
    skipped, which is all threshold training needs.
    """
    x = np.asarray(x, dtype=np.float64)
    out_shape = (x.shape[0],) + layer.output_shape(x.shape[1:])
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != out_shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {out_shape}")
    kind, hp = layer.kind, layer.hp

    if kind == "dense":
        w = np.asarray(params["weight"], dtype=np.float64)
        grads = {}
        if need_params:
            grads = {"weight": grad_out.T @ x, "bias": grad_out.sum(axis=0)}
        return grad_out @ w, grads

    if kind == "conv2d":
        w = np.asarray(params["weight"], dtype=np.float64)
        k, p, s = hp["kernel_size"], hp.get("padding", 0), hp.get("stride", 1)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        grads = {}
        if need_params:
            win = _windows(xp, k, s)
            grads = {"weight": np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3])),
                     "bias": grad_out.sum(axis=(0, 2, 3))}
        gxp = np.zeros_like(xp)
        ho, wo = grad_out.shape[2], grad_out.shape[3]
        for i in range(k):
            for j in range(k):
                # (N, O, Ho, Wo) x (O, C) -> (N, C, Ho, Wo)
                contrib = np.tensordot(grad_out, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += contrib
        gx = gxp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else gxp
        return gx, grads

    if kind in ("maxpool2d", "avgpool2d"):
        k, s = hp["kernel_size"], hp["stride"]
        n, c, ho, wo = grad_out.shape
        gx = np.zeros_like(x)
        if kind == "maxpool2d":
            win = _windows(x, k, s).reshape(n, c, ho, wo, k * k)
            arg = win.argmax(axis=-1)  # first maximum wins ties
        for i in range(k):
            for j in range(k):
                if kind == "maxpool2d":
                    g = grad_out * (arg == i * k + j)
                else:
                    g = grad_out / (k * k)
                gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += g
        return gx, {}

    if kind == "flatten":
        return grad_out.reshape(x.shape), {}

    policy, lam, k = _activation_args(params)
    gx, glam = act.activation_backward(policy, x, grad_out, lam, k)
    return gx, ({} if glam is None else {"lambda": glam})


# ---------------------------------------------------------------- softmax


def softmax_temperature(z, T=1.0):
    """Temperature softmax over the last axis, ``exp(z/T) / sum(exp(z/T))``."""
    if not T > 0:
        raise InvalidValueError(f"temperature must be positive, got {T!r}")
    z = np.asarray(z, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_temperature(z, T=1.0):
    if not T > 0:
        raise InvalidValueError(f"temperature must be positive, got {T!r}")
    z = np.asarray(z, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
