"""Training configuration and a plain Adam optimizer."""
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InvalidValueError


@dataclass
class TrainConfig:
    """Hyperparameters shared by baseline training and threshold training.

    ``epochs`` drives baseline weight training; ``epochs_last_layer`` and
    ``epochs_other_layers`` drive the threshold trainers. The learning rate
    is halved every ``lr_halving_every`` epochs.
    """
    epochs: int = 5
    epochs_last_layer: int = 50
    epochs_other_layers: int = 20
    learning_rate: float = 0.01
    lr_halving_every: int = 10
    batch_size: int = 128
    temperature: float = 4.0
    gamma: float = 1e-4
    slope_k: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "epochs_last_layer", "epochs_other_layers"):
            if int(getattr(self, name)) < 0:
                raise InvalidValueError(f"{name} must be >= 0")
        for name in ("learning_rate", "temperature", "slope_k", "eps", "batch_size", "lr_halving_every"):
            if not getattr(self, name) > 0:
                raise InvalidValueError(f"{name} must be positive")
        if self.gamma < 0:
            raise InvalidValueError("gamma must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidValueError("Adam betas must lie in [0, 1)")

    def lr_at(self, epoch):
        return self.learning_rate * 0.5 ** (epoch // self.lr_halving_every)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string-valued key/value pairs (config files, CLI)."""
        kwargs = {}
        for f in fields(cls):
            if f.name in mapping and mapping[f.name] is not None:
                kwargs[f.name] = type(f.default)(mapping[f.name])
        return cls(**kwargs)


class Adam:
    """Adam over a list of float64 arrays, updated in place."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads, lr):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
