"""ReLU, clipped ReLU and the smooth hybrid clipped ReLU (HyReLU).

Scalar entry points (``relu``, ``clipped_relu``, ``hyrelu``, ``hyrelu_grad``)
validate their thresholds. The ``*_forward``/``*_backward`` array kernels used
by the network engine do not, because fault injection can legitimately drive a
stored threshold negative or huge and inference must carry on regardless.
"""
import json
import math

import numpy as np
from scipy.special import expit

from .errors import FormatError, InvalidValueError, ShapeError

DEFAULT_K = 10.0
POLICIES = ("relu", "clipped_relu", "hyrelu", "fitact_neuronwise")
SMOOTH_POLICIES = ("hyrelu", "fitact_neuronwise")
# smallest positive Q15.16 value; floor for thresholds profiled at exactly 0
MIN_THRESHOLD = 2.0**-16


def _check_positive(name, value):
    if not (math.isfinite(value) and value > 0):
        raise InvalidValueError(f"{name} must be a finite positive number, got {value!r}")


def relu(x):
    return max(0.0, x)


def clipped_relu(x, lam):
    """``x`` when ``0 <= x <= lam``, otherwise 0 (out-of-range values are dropped)."""
    _check_positive("threshold", lam)
    return x if 0 <= x <= lam else 0.0


def hyrelu(x, lam, k=DEFAULT_K):
    """Smoothly clipped ReLU: ``max(0, x * sigmoid(k * (lam - x)))``.

    Sub-threshold inputs pass almost unchanged; inputs well above ``lam``
    decay to zero. At ``x == lam`` the output is exactly ``lam / 2``.
    """
    _check_positive("threshold", lam)
    _check_positive("slope k", k)
    return float(hyrelu_forward(np.float64(x), lam, k))


def hyrelu_grad(x, lam, k=DEFAULT_K):
    """Return ``(d/dx, d/dlam)`` of :func:`hyrelu`; both are 0 where the output is clamped."""
    _check_positive("threshold", lam)
    _check_positive("slope k", k)
    dx, dlam = hyrelu_partials(np.float64(x), lam, k)
    return float(dx), float(dlam)


# ---------------------------------------------------------------- array kernels


def relu_forward(x):
    return np.maximum(x, 0.0)


def clipped_forward(x, lam):
    return np.where((x >= 0) & (x <= lam), x, 0.0)


def hyrelu_forward(x, lam, k):
    s = expit(k * (lam - x))
    return np.where(x > 0, x * s, 0.0)


def hyrelu_partials(x, lam, k):
    s = expit(k * (lam - x))
    ds = s * (1.0 - s)
    active = x > 0
    dx = np.where(active, s - x * k * ds, 0.0)
    dlam = np.where(active, x * k * ds, 0.0)
    return dx, dlam


def activation_forward(policy, x, lam=None, k=DEFAULT_K):
    if policy == "relu":
        return relu_forward(x)
    if lam is None:
        raise InvalidValueError(f"policy {policy!r} needs a bound threshold")
    if policy == "clipped_relu":
        return clipped_forward(x, lam)
    if policy in SMOOTH_POLICIES:
        return hyrelu_forward(x, lam, k)
    raise InvalidValueError(f"unknown activation policy {policy!r}")


def activation_backward(policy, x, grad_out, lam=None, k=DEFAULT_K):
    """Return ``(grad_in, grad_lam)`` where ``grad_lam`` has ``lam``'s shape.

    ``lam`` is a scalar (layer-wise) or an array shaped like one sample's
    activation (neuron-wise); the batch axis is summed out accordingly.
    The hard clip has zero derivative w.r.t. its threshold almost everywhere.
    """
    if policy == "relu":
        return grad_out * (x > 0), None
    if policy == "clipped_relu":
        mask = (x >= 0) & (x <= lam)
        return grad_out * mask, np.zeros_like(np.asarray(lam, dtype=np.float64))
    if policy in SMOOTH_POLICIES:
        dx, dlam = hyrelu_partials(x, lam, k)
        contrib = grad_out * dlam
        if np.ndim(lam) == 0:
            g_lam = np.float64(contrib.sum())
        else:
            g_lam = contrib.sum(axis=0)
        return grad_out * dx, g_lam
    raise InvalidValueError(f"unknown activation policy {policy!r}")


# ---------------------------------------------------------------- thresholds


class ThresholdSet:
    """Clipping thresholds for every activation layer of a network.

    Activation layers are addressed by their ordinal among the network's
    activation layers (0 = first, ``last_index`` = the final hidden layer).
    Each entry is either a scalar (layer-wise) or a flat per-neuron vector.
    The hybrid layout keeps a vector only at ``last_index``; fully
    neuron-wise layouts (FitAct, neuron-wise Ranger) have vectors everywhere.
    """

    def __init__(self, values, last_index, k=DEFAULT_K, policy="hyrelu", validate=True):
        if policy not in POLICIES or policy == "relu":
            raise InvalidValueError(f"threshold policy must be a clipping policy, got {policy!r}")
        self.k = float(k)
        self.policy = policy
        self.last_index = int(last_index)
        self.values = {}
        for idx, v in sorted(values.items()):
            if np.ndim(v) == 0:
                self.values[int(idx)] = float(v)
            else:
                self.values[int(idx)] = np.array(v, dtype=np.float64).ravel()
        if validate:
            self.validate()

    def validate(self):
        _check_positive("slope k", self.k)
        for idx, v in self.values.items():
            arr = np.asarray(v)
            if not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
                raise InvalidValueError(f"thresholds of layer {idx} must be finite and > 0")
        if self.last_index not in self.values:
            raise InvalidValueError(f"no thresholds for the final hidden layer {self.last_index}")

    # granularity views
    @property
    def per_layer(self):
        return {i: v for i, v in self.values.items() if isinstance(v, float)}

    @property
    def per_neuron(self):
        return {i: v for i, v in self.values.items() if not isinstance(v, float)}

    @property
    def last_layer(self):
        v = self.values[self.last_index]
        return np.atleast_1d(np.asarray(v, dtype=np.float64))

    @property
    def is_hybrid(self):
        return set(self.per_neuron) == {self.last_index}

    @property
    def count(self):
        """Number of stored threshold words."""
        return sum(np.size(v) for v in self.values.values())

    def flat(self):
        """All thresholds in fault-space order (ascending layer, then neuron)."""
        if not self.values:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in self.values.values()])

    def with_flat(self, flat, validate=False):
        """Copy whose thresholds are replaced by ``flat`` (inverse of :meth:`flat`)."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.count:
            raise ShapeError(f"expected {self.count} thresholds, got {flat.size}")
        values, pos = {}, 0
        for idx, v in self.values.items():
            n = np.size(v)
            values[idx] = float(flat[pos]) if isinstance(v, float) else flat[pos:pos + n].copy()
            pos += n
        return ThresholdSet(values, self.last_index, self.k, self.policy, validate=validate)

    def copy(self):
        return self.with_flat(self.flat(), validate=False)

    def replace(self, idx, value):
        values = dict(self.values)
        values[idx] = value
        return ThresholdSet(values, self.last_index, self.k, self.policy, validate=False)

    def check_network(self, neuron_counts):
        """Raise unless entries cover exactly the given per-layer neuron counts."""
        if sorted(self.values) != list(range(len(neuron_counts))):
            raise ShapeError(
                f"thresholds cover layers {sorted(self.values)}, network has {len(neuron_counts)} activation layers")
        if self.last_index != len(neuron_counts) - 1:
            raise ShapeError("last_index is not the network's final hidden layer")
        for idx, v in self.values.items():
            if not isinstance(v, float) and v.size != neuron_counts[idx]:
                raise ShapeError(f"layer {idx}: {v.size} thresholds for {neuron_counts[idx]} neurons")

    def __eq__(self, other):
        if not isinstance(other, ThresholdSet):
            return NotImplemented
        return (self.k == other.k and self.policy == other.policy and self.last_index == other.last_index
                and self.values.keys() == other.values.keys()
                and all(np.array_equal(self.values[i], other.values[i]) for i in self.values))

    def __repr__(self):
        return (f"ThresholdSet(policy={self.policy!r}, k={self.k}, layers={len(self.values)}, "
                f"count={self.count})")

    # serialization
    def to_dict(self):
        last = self.values[self.last_index]
        doc = {
            "k": self.k,
            "policy": self.policy,
            "last_index": self.last_index,
            "per_layer": {str(i): v for i, v in self.per_layer.items()},
            "last_layer": [] if isinstance(last, float) else last.tolist(),
        }
        others = {str(i): v.tolist() for i, v in self.per_neuron.items() if i != self.last_index}
        if others:
            doc["per_neuron"] = others
        return doc

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc):
        try:
            last = int(doc["last_index"])
            values = {int(i): float(v) for i, v in doc["per_layer"].items()}
            for i, v in doc.get("per_neuron", {}).items():
                values[int(i)] = np.asarray(v, dtype=np.float64)
            if doc["last_layer"]:
                values[last] = np.asarray(doc["last_layer"], dtype=np.float64)
            return cls(values, last, doc["k"], doc.get("policy", "hyrelu"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidValueError):
                raise
            raise FormatError(f"malformed threshold document: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"threshold file is not JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(f.read())
