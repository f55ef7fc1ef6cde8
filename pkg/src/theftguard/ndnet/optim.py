"""Minibatch SGD with momentum, and the single training-step primitive."""

from __future__ import annotations

import numpy as np


class DivergenceError(RuntimeError):
    def __init__(self, step_index, value):
        self.step_index = step_index
        self.value = value
        super().__init__(f"non-finite loss ({value}) at training step {step_index}")


class SGD:
    def __init__(self, model, lr=0.01, momentum=0.9):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(a) for _, a in model.param_items()]
        self.steps = 0

    def apply(self, model, grad_arrays):
        for (_, w), v, g in zip(model.param_items(), self.velocity, grad_arrays):
            v *= self.momentum
            v -= self.lr * g
            w += v
        self.steps += 1


def train_step(model, loss, batch, opt):
    """One SGD step on a minibatch; returns (loss value, gradient norm).

    The gradient is the batch mean. A non-finite loss raises DivergenceError
    carrying the step index at which training went off the rails.
    """
    xs, ys = batch
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    p, _, caches = model.forward_cached(xs)
    value = loss.value(p, ys)
    if not np.isfinite(value):
        raise DivergenceError(opt.steps, value)
    dz = loss.dz(p, ys) / xs.shape[0]
    _, grads = model.backward_dz(dz, caches, need_dx=False)
    flat = [g for layer_grads in grads for g in layer_grads]
    gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in flat)))
    opt.apply(model, flat)
    return value, gnorm
