"""Adam with inverse-square-root warmup and global-norm gradient clipping."""
from typing import List, Sequence, Tuple

import numpy as np

from gncformer.tensor import Tensor


class InverseSqrtSchedule:
    """
    Linear warmup to ``peak_lr`` over ``warmup_steps``, then decay proportional to ``step**-0.5``.

    Steps count from 1; a warmup of 0 behaves like a warmup of 1.
    """

    def __init__(self, peak_lr: float, warmup_steps: int):
        self.peak_lr = peak_lr
        self.warmup = max(1, warmup_steps)

    def __call__(self, step: int) -> float:
        step = max(1, step)
        return self.peak_lr * min(step / self.warmup, np.sqrt(self.warmup / step))


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Scale ``grads`` jointly so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        return [g * factor for g in grads], norm
    return list(grads), norm


class Adam:
    """
    Adam without weight decay, updating parameter arrays in place.

    :param params: Parameters, in a fixed order matching the gradients passed to ``step``.
    :type params: list
    :param schedule: Learning rate as a function of the 1-based step.
    :type schedule: Callable
    """

    def __init__(self, params: Sequence[Tensor], schedule, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-9):
        self.params = list(params)
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> float:
        """Apply one update; returns the learning rate used."""
        if len(grads) != len(self.params):
            raise ValueError(f'{len(grads)} gradients for {len(self.params)} parameters')
        self.t += 1
        lr = self.schedule(self.t)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr
