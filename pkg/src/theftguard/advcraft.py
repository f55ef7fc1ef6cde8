"""Adversarial example crafting: the fast gradient sign method.

x* = x + epsilon * sign(dc/dx), an infinity-norm-bounded single step. The
sign of an exactly-zero gradient coordinate is 0, so coordinates the cost
does not react to are left alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndnet import grad_input


@dataclass(frozen=True)
class InputPerturbationConfig:
    epsilon: float = 0.3
    clip_range: tuple | None = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def fgsm(model, loss, x, y, cfg):
    """Craft one adversarial example (or a batch) away from label y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        g = grad_input(model, loss, x, y)
        out = x + cfg.epsilon * np.sign(g)
    else:
        p, _, caches = model.forward_cached(x)
        dz = loss.dz(p, y)
        dx, _ = model.backward_dz(dz, caches, need_dx=True)
        out = x + cfg.epsilon * np.sign(dx)
    if cfg.clip_range is not None:
        out = np.clip(out, cfg.clip_range[0], cfg.clip_range[1])
    return out


def _batches(n, size):
    for lo in range(0, n, size):
        yield lo, min(lo + size, n)


def predict_classes(model, xs, batch_size=256):
    xs = np.asarray(xs, dtype=np.float64)
    out = np.empty(len(xs), dtype=np.int64)
    for lo, hi in _batches(len(xs), batch_size):
        out[lo:hi] = model.forward(xs[lo:hi]).argmax(axis=-1)
    return out


def accuracy(model, ds, batch_size=256):
    return float(np.mean(predict_classes(model, ds.inputs, batch_size) == ds.labels))


def transfer_attack_accuracy(target, substitute, testset, cfg, loss=None, batch_size=256):
    """Target's accuracy on FGSM samples crafted against the substitute.

    The substitute labels each input with its own argmax prediction (the
    attacker holds no ground truth), crafts x*, and the target is scored on
    x* against the true test labels.
    """
    from .ndnet import LossFunction

    if len(testset) == 0:
        raise ValueError("empty test set")
    loss = loss or LossFunction()
    k = testset.n_classes
    correct = 0
    for lo, hi in _batches(len(testset), batch_size):
        xs = testset.inputs[lo:hi]
        pred = substitute.forward(xs).argmax(axis=-1)
        ys = np.zeros((len(xs), k))
        ys[np.arange(len(xs)), pred] = 1.0
        adv = fgsm(substitute, loss, xs, ys, cfg)
        correct += int((target.forward(adv).argmax(axis=-1) == testset.labels[lo:hi]).sum())
    return correct / len(testset)
