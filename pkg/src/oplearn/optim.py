"""Minibatch optimizers over lists of parameter arrays.

Both trainers keep their parameters as a fixed-order list of float64 arrays
and hand the matching gradient list to ``step``.  Updates are in place and
single-writer; given the same gradient sequence the trajectory is
reproducible to the bit.
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ContractError


@dataclass
class Sgd:
    learning_rate: float

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        if len(params) != len(grads):
            raise ContractError("params/grads length mismatch")
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


@dataclass
class Adam:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _m: list = field(default_factory=list, repr=False)
    _v: list = field(default_factory=list, repr=False)
    _t: int = field(default=0, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ContractError("invalid Adam moment constants")

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        if len(params) != len(grads):
            raise ContractError("params/grads length mismatch")
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        scale1 = 1.0 - b1 ** self._t
        scale2 = 1.0 - b2 ** self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.learning_rate * (m / scale1) \
                / (np.sqrt(v / scale2) + self.eps)


def make_optimizer(kind, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
    """Build the tagged optimizer choice: 'adam' or 'plain-sgd'."""
    if kind == "adam":
        return Adam(learning_rate, beta1, beta2, eps)
    if kind == "plain-sgd":
        return Sgd(learning_rate)
    raise ContractError(f"unknown optimizer {kind!r}")


def schedule_lr(base: float, schedule: str, epoch: int, epochs: int) -> float:
    """Learning rate for one epoch.

    "constant" keeps the base rate; "cosine" anneals it along half a cosine
    wave so the final epoch runs at a near-zero rate, which settles the last
    iterates instead of leaving them bouncing at the noise floor.
    """
    if schedule == "constant":
        return base
    if schedule == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))
    raise ContractError(f"unknown lr schedule {schedule!r}")
