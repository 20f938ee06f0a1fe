"""Optimisers operating in place on :class:`Parameter` lists."""
import numpy as np

from ..errors import TrainingAbort


def sgd_step(param, grad, velocity, lr, momentum=0.9):
    """One momentum-SGD update; returns ``(new_param, new_velocity)``.

    ``v <- momentum * v + grad``; ``param <- param - lr * v``.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    v = momentum * velocity + grad
    return param - lr * v, v


def _check_finite(params):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingAbort(f"non-finite gradient in parameter {p.name!r}")


class SGD:
    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        _check_finite(self.params)
        for k, p in enumerate(self.params):
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            p.data, self.velocity[k] = sgd_step(p.data, g, self.velocity[k], self.lr, self.momentum)
            p.data = p.data.astype(p.grad.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        _check_finite(self.params)
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in enumerate(self.params):
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data - update).astype(p.grad.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
