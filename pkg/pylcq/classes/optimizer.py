"""
The OptimizerState class: AdamW with a cosine-annealed learning rate.
"""

import math

import numpy as np


def cosine_lr(base_lr, step, total_steps):
    """``0.5 * lr0 * (1 + cos(pi * t / T))``; ``lr0`` when T is 0."""
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


class OptimizerState:
    """
    Moments and step counter of an AdamW optimizer over named arrays.

    Example:

    >>> state = OptimizerState(lr=0.01, total_steps=40)
    >>> state.update(params, grads)
    """

    def __init__(self, lr=0.01, total_steps=0, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.base_lr = lr
        self.total_steps = total_steps
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        # Steps taken so far
        self.step = 0
        # First and second moment estimates keyed like the parameters
        self.m = {}
        self.v = {}

    @classmethod
    def from_config(cls, config, total_steps):
        return cls(config.lr, total_steps, config.weight_decay, config.beta1, config.beta2, config.adam_eps)

    @property
    def lr(self):
        """Learning rate of the next update."""
        return cosine_lr(self.base_lr, self.step, self.total_steps)

    def update(self, params, grads):
        """
        Apply one AdamW step in place.

        Parameters
        ----------
        params : dict
            ``{name: numpy.ndarray}`` updated in place.
        grads : dict
            Gradients keyed like ``params``; missing keys count as zero.

        Returns
        -------
        lr : float
            The learning rate that was used.
        """
        lr = self.lr
        self.step += 1
        correction1 = 1.0 - self.beta1 ** self.step
        correction2 = 1.0 - self.beta2 ** self.step
        for name in sorted(params):
            param = params[name]
            grad = grads.get(name)
            if grad is None:
                grad = np.zeros_like(param)
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            param -= lr * self.weight_decay * param
            param -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        return lr
