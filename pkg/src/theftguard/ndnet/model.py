"""Model container and the gradient entry points.

A Model is an ordered layer stack producing logits, with a terminal softmax
turning them into a label distribution. Gradients come in three flavours:
with respect to parameters, with respect to the input, and the per-class
log-probability gradients that the output-perturbation defense builds on.
"""

from __future__ import annotations

import numpy as np

from .layers import InputShapeError
from .params import ParamVector


class UnsupportedHeadError(TypeError):
    pass


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Model:
    def __init__(self, layers, input_shape, spec_id="custom", softmax_head=True):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.spec_id = spec_id
        self.softmax_head = softmax_head

    # -- parameter plumbing ------------------------------------------------

    def param_items(self):
        items = []
        for layer in self.layers:
            items.extend(layer.param_items())
        return items

    def num_params(self):
        return sum(a.size for _, a in self.param_items())

    def param_vector(self):
        return ParamVector.from_arrays(self.param_items())

    def set_params(self, pv):
        flat = pv.flat if isinstance(pv, ParamVector) else np.asarray(pv)
        off = 0
        for _, arr in self.param_items():
            arr[...] = flat[off:off + arr.size].reshape(arr.shape)
            off += arr.size
        if off != flat.size:
            raise ValueError(f"parameter count mismatch: {flat.size} given, {off} needed")

    # -- evaluation --------------------------------------------------------

    def _batched(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x[None, ...], True
        if x.shape[1:] == self.input_shape:
            return x, False
        raise InputShapeError(
            f"expected input shape {self.input_shape} (optionally batched), got {x.shape}"
        )

    def forward(self, x):
        """Softmax output for one sample or a batch of samples."""
        xb, single = self._batched(x)
        p, _, _ = self.forward_cached(xb)
        return p[0] if single else p

    def logits(self, x):
        xb, single = self._batched(x)
        h = xb
        for layer in self.layers:
            h, _ = layer.forward(h)
        return h[0] if single else h

    def forward_cached(self, xb):
        """Batched forward keeping per-layer caches for backward/jvp passes."""
        caches = []
        h = xb
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        z = h
        if not self.softmax_head:
            return z, z, caches
        return softmax(z), z, caches

    # -- reverse mode ------------------------------------------------------

    def backward_dz(self, dz, caches, per_sample=False, need_dx=True):
        """Backpropagate a logit gradient; returns (dx, grads per layer).

        grads is a list (one entry per layer) of lists aligned with each
        layer's param_items(). With per_sample=True every gradient array
        keeps its leading batch axis.
        """
        grads = [None] * len(self.layers)
        d = dz
        for i in range(len(self.layers) - 1, -1, -1):
            need = need_dx or i > 0
            d, g = self.layers[i].backward(d, caches[i], per_sample=per_sample, need_dx=need)
            grads[i] = g
        return d, grads

    def grads_to_vector(self, grads):
        pairs = []
        for layer, g in zip(self.layers, grads):
            for (name, _), arr in zip(layer.param_items(), g):
                pairs.append((name, arr))
        return ParamVector.from_arrays(pairs)

    # -- forward mode ------------------------------------------------------

    def jvp_logits(self, caches, tparams):
        """Tangent of the logits along per-sample parameter tangents.

        tparams: list per layer of per-sample tangent arrays (or None for
        layers without parameters). The input tangent is zero, so this is
        the directional derivative of the logits in parameter space.
        """
        t = None
        for layer, cache, tp in zip(self.layers, caches, tparams):
            t = layer.jvp(cache, t, tp)
        return t


# -- gradient entry points (single sample) ----------------------------------


def _single(model, x, y):
    xb, _ = model._batched(np.asarray(x, dtype=np.float64))
    if xb.shape[0] != 1:
        raise InputShapeError("expected a single sample, got a batch")
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    return xb, y


def grad_params(model, loss, x, y):
    """Gradient of loss(model(x), y) with respect to all parameters."""
    xb, yb = _single(model, x, y)
    p, _, caches = model.forward_cached(xb)
    dz = loss.dz(p, yb)
    _, grads = model.backward_dz(dz, caches, need_dx=False)
    return model.grads_to_vector(grads)


def grad_input(model, loss, x, y):
    """Gradient of loss(model(x), y) with respect to the input sample."""
    xb, yb = _single(model, x, y)
    p, _, caches = model.forward_cached(xb)
    dz = loss.dz(p, yb)
    dx, _ = model.backward_dz(dz, caches, need_dx=True)
    return dx[0]


def per_class_log_prob_grads(model, x):
    """u_i = d(log p_i)/d(theta) for every class i; list of ParamVector.

    One backward pass per class: d(log p_i)/dz = e_i - p.
    """
    if not model.softmax_head:
        raise UnsupportedHeadError("per-class log-prob gradients need a softmax head")
    xb, _ = model._batched(np.asarray(x, dtype=np.float64))
    if xb.shape[0] != 1:
        raise InputShapeError("expected a single sample, got a batch")
    p, _, caches = model.forward_cached(xb)
    k = p.shape[-1]
    out = []
    for i in range(k):
        dz = -p.copy()
        dz[0, i] += 1.0
        _, grads = model.backward_dz(dz, caches, need_dx=False)
        out.append(model.grads_to_vector(grads))
    return out
