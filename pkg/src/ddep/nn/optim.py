"""Parameter container, Adam with decoupled weight decay, cosine LR decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ddep.errors import ContractViolationError, InvalidArgumentError
from ddep.nn.tensor import Tensor


@dataclass
class OptimizerConfig:
    base_lr: float
    total_steps: int
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.base_lr > 0:
            raise InvalidArgumentError(f"base_lr must be positive, got {self.base_lr}")
        if not self.total_steps > 0:
            raise InvalidArgumentError(f"total_steps must be positive, got {self.total_steps}")
        if self.weight_decay < 0:
            raise InvalidArgumentError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidArgumentError("Adam betas must lie in (0, 1)")
        if not self.eps > 0:
            raise InvalidArgumentError("Adam eps must be positive")


class Parameter:
    """One named tensor plus its Adam state.

    `decay` marks tensors subject to weight decay (conv/dense weights only;
    biases and normalization affines are exempt). `trainable` gates both the
    optimizer update and gradient computation.
    """

    __slots__ = ("tensor", "m", "v", "steps", "decay", "trainable")

    def __init__(self, data, decay=False, trainable=True):
        self.tensor = Tensor(np.asarray(data), requires_grad=trainable)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.steps = 0
        self.decay = decay
        self.trainable = trainable

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = value

    @property
    def grad(self):
        return self.tensor.grad

    def set_trainable(self, flag):
        self.trainable = flag
        self.tensor.requires_grad = flag


class ParamSet:
    """Ordered mapping of hierarchical names to parameters.

    Names use dotted prefixes ("encoder.", "decoder.", "head.") so whole
    subtrees can be frozen, hashed, or copied between models.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name, data, decay=False):
        if name in self._params:
            raise ContractViolationError(f"duplicate parameter name {name!r}")
        self._params[name] = Parameter(data, decay=decay)
        return self._params[name]

    def __getitem__(self, name) -> Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None

    def num_values(self, prefix=""):
        return sum(p.data.size for n, p in self.items() if n.startswith(prefix))

    def state_arrays(self, prefix=""):
        """Name -> array view of current values, filtered by prefix."""
        return {n: p.data for n, p in self.items() if n.startswith(prefix)}

    def byte_digest(self, prefix=""):
        """SHA-256 over raw little-endian bytes of the selected parameters."""
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self._params):
            if not name.startswith(prefix):
                continue
            h.update(name.encode())
            h.update(self._params[name].data.astype("<f4", copy=False).tobytes())
        return h.hexdigest()


def cosine_lr(step, cfg: OptimizerConfig):
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps)), clamped past the end."""
    if step < 0:
        raise InvalidArgumentError(f"step must be >= 0, got {step}")
    if step >= cfg.total_steps:
        return 0.0
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_steps))


def adam_step(params: ParamSet, lr, cfg: OptimizerConfig):
    """One bias-corrected Adam update over all trainable parameters.

    Weight decay is decoupled (applied directly to the parameter, not the
    gradient) and restricted to decay-flagged tensors. Frozen parameters are
    left untouched, including their moment estimates.
    """
    for name, p in params.items():
        if not p.trainable:
            continue
        if p.grad is None:
            raise ContractViolationError(f"missing gradient for trainable parameter {name!r}")
        g = p.grad
        p.steps += 1
        p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * g
        p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * (g * g)
        mhat = p.m / (1.0 - cfg.beta1**p.steps)
        vhat = p.v / (1.0 - cfg.beta2**p.steps)
        update = mhat / (np.sqrt(vhat) + cfg.eps)
        if p.decay and cfg.weight_decay > 0.0:
            update = update + cfg.weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)
    return params
