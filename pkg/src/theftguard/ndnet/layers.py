"""Layers: dense, 3x3 same-padding convolution, ReLU, 2x2 max-pool, pooling heads.

Conventions used throughout:
  - batched activations; images are (B, H, W, C), vectors are (B, D)
  - float64 everywhere
  - forward(x) -> (y, cache); backward(dy, cache) -> (dx, grads)
  - grads is a list aligned with param_items(); with per_sample=True each
    gradient keeps a leading batch axis instead of being summed
  - jvp(cache, tx, tparams) pushes a tangent forward through the layer:
    tx is the tangent of the input, tparams (per-sample, leading batch axis)
    the tangent of this layer's parameters, either may be None for zero
"""

from __future__ import annotations

import numpy as np


class InputShapeError(ValueError):
    pass


class Layer:
    name = "layer"

    def param_items(self):
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache, per_sample=False, need_dx=True):
        raise NotImplementedError

    def jvp(self, cache, tx, tparams):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, d_in, d_out, name="dense"):
        self.W = np.zeros((d_in, d_out))
        self.b = np.zeros(d_out)
        self.name = name

    def param_items(self):
        return [(self.name + ".W", self.W), (self.name + ".b", self.b)]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise InputShapeError(
                f"{self.name}: expected (B, {self.W.shape[0]}), got {x.shape}"
            )
        return x @ self.W + self.b, x

    def backward(self, dy, x, per_sample=False, need_dx=True):
        if per_sample:
            # (B, d_in, d_out) outer products, one per sample
            dW = x[:, :, None] * dy[:, None, :]
            db = dy.copy()
        else:
            dW = x.T @ dy
            db = dy.sum(axis=0)
        dx = dy @ self.W.T if need_dx else None
        return dx, [dW, db]

    def jvp(self, x, tx, tparams):
        ty = np.zeros((x.shape[0], self.W.shape[1]))
        if tx is not None:
            ty += tx @ self.W
        if tparams is not None:
            tW, tb = tparams
            # per-sample weight tangent: y_b += x_b @ tW_b
            ty += np.matmul(x[:, None, :], tW)[:, 0, :]
            ty += tb
        return ty


def _im2col3(x):
    """(B, H, W, C) -> columns (B, H*W, 9*C) for a 3x3 stride-1 same conv."""
    B, H, W, C = x.shape
    xp = np.zeros((B, H + 2, W + 2, C))
    xp[:, 1:H + 1, 1:W + 1, :] = x
    cols = np.empty((B, H, W, 9, C))
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, k, :] = xp[:, di:di + H, dj:dj + W, :]
            k += 1
    return cols.reshape(B, H * W, 9 * C)


def _col2im3(dcols, shape):
    """Scatter column gradients back to (B, H, W, C); inverse of _im2col3."""
    B, H, W, C = shape
    d = dcols.reshape(B, H, W, 9, C)
    dxp = np.zeros((B, H + 2, W + 2, C))
    k = 0
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + H, dj:dj + W, :] += d[:, :, :, k, :]
            k += 1
    return dxp[:, 1:H + 1, 1:W + 1, :]


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero same-padding. Weights (9*C_in, C_out)."""

    def __init__(self, c_in, c_out, name="conv"):
        self.c_in = c_in
        self.c_out = c_out
        self.W = np.zeros((9 * c_in, c_out))
        self.b = np.zeros(c_out)
        self.name = name

    def param_items(self):
        return [(self.name + ".W", self.W), (self.name + ".b", self.b)]

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise InputShapeError(
                f"{self.name}: expected (B, H, W, {self.c_in}), got {x.shape}"
            )
        B, H, W, _ = x.shape
        cols = _im2col3(x)
        y = (cols.reshape(B * H * W, -1) @ self.W).reshape(B, H, W, self.c_out)
        y += self.b
        return y, (cols, x.shape)

    def backward(self, dy, cache, per_sample=False, need_dx=True):
        cols, xshape = cache
        B, H, W, C = xshape
        dyc = dy.reshape(B, H * W, self.c_out)
        if per_sample:
            dW = np.matmul(cols.transpose(0, 2, 1), dyc)      # (B, 9C, c_out)
            db = dyc.sum(axis=1)                              # (B, c_out)
        else:
            dW = cols.reshape(B * H * W, -1).T @ dyc.reshape(B * H * W, -1)
            db = dyc.sum(axis=(0, 1))
        dx = None
        if need_dx:
            dcols = dyc.reshape(B * H * W, -1) @ self.W.T
            dx = _col2im3(dcols.reshape(B, H * W, -1), xshape)
        return dx, [dW, db]

    def jvp(self, cache, tx, tparams):
        cols, xshape = cache
        B, H, W, _ = xshape
        ty = np.zeros((B, H * W, self.c_out))
        if tx is not None:
            tcols = _im2col3(tx)
            ty += (tcols.reshape(B * H * W, -1) @ self.W).reshape(B, H * W, -1)
        if tparams is not None:
            tW, tb = tparams
            ty += np.matmul(cols, tW)
            ty += tb[:, None, :]
        return ty.reshape(B, H, W, self.c_out)


class ReLU(Layer):
    name = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, mask, per_sample=False, need_dx=True):
        return dy * mask, []

    def jvp(self, mask, tx, tparams):
        return tx * mask if tx is not None else None


class MaxPool2(Layer):
    """2x2 max-pool, stride 2. Odd trailing rows/columns are dropped; the
    first maximum in each window wins ties, so the backward routing is
    deterministic."""

    name = "maxpool"

    @staticmethod
    def _windows(x):
        B, H, W, C = x.shape
        Ho, Wo = H // 2, W // 2
        xc = x[:, :Ho * 2, :Wo * 2, :].reshape(B, Ho, 2, Wo, 2, C)
        return xc.transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, 4)

    def forward(self, x):
        win = self._windows(x)
        arg = win.argmax(axis=-1)
        y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return y, (arg, x.shape)

    def backward(self, dy, cache, per_sample=False, need_dx=True):
        arg, xshape = cache
        B, H, W, C = xshape
        Ho, Wo = H // 2, W // 2
        buf = np.zeros((B, Ho, Wo, C, 4))
        np.put_along_axis(buf, arg[..., None], dy[..., None], axis=-1)
        dx = np.zeros((B, H, W, C))
        dx[:, :Ho * 2, :Wo * 2, :] = (
            buf.reshape(B, Ho, Wo, C, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(B, Ho * 2, Wo * 2, C)
        )
        return dx, []

    def jvp(self, cache, tx, tparams):
        if tx is None:
            return None
        arg, _ = cache
        twin = self._windows(tx)
        return np.take_along_axis(twin, arg[..., None], axis=-1)[..., 0]


class GlobalAvgPool(Layer):
    """(B, H, W, C) -> (B, C) by averaging over the spatial grid."""

    name = "gap"

    def forward(self, x):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, dy, xshape, per_sample=False, need_dx=True):
        B, H, W, C = xshape
        dx = np.broadcast_to(dy[:, None, None, :] / (H * W), xshape).copy()
        return dx, []

    def jvp(self, xshape, tx, tparams):
        return tx.mean(axis=(1, 2)) if tx is not None else None


class Flatten(Layer):
    name = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, xshape, per_sample=False, need_dx=True):
        return dy.reshape(xshape), []

    def jvp(self, xshape, tx, tparams):
        return tx.reshape(tx.shape[0], -1) if tx is not None else None
