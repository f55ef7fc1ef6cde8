"""Shared test utilities: finite-difference oracles and tiny model builders."""

import numpy as np

from theftguard import ndnet as nd


def central_fd(f, x0, step):
    """Central finite differences of scalar f over a flat float vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    out = np.empty(x0.size)
    flat = x0.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        out[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * step)
    return out


def fd_vs_analytic(fd, an, rtol, atol=1e-8):
    fd = np.asarray(fd).ravel()
    an = np.asarray(an).ravel()
    scale = np.maximum(np.abs(fd), np.abs(an))
    bad = np.abs(fd - an) > rtol * scale + atol
    return (~bad).all(), int(bad.sum()), float(np.abs(fd - an).max())


def fill_random(model, rng, scale=0.6):
    for _, arr in model.param_items():
        arr[...] = rng.uniform(-scale, scale, arr.shape)
    return model


def tiny_dense_model(rng, d_in=5, hidden=7, k=4):
    layers = [nd.Dense(d_in, hidden, "fc0"), nd.ReLU(), nd.Dense(hidden, k, "out")]
    return fill_random(nd.Model(layers, (d_in,)), rng)


def tiny_conv_model(rng, h=5, w=5, c=1, width=3, k=4):
    ho, wo = h // 2, w // 2
    layers = [
        nd.Conv3x3(c, width, "conv0"),
        nd.ReLU(),
        nd.MaxPool2(),
        nd.Flatten(),
        nd.Dense(ho * wo * width, k, "out"),
    ]
    return fill_random(nd.Model(layers, (h, w, c)), rng)


def tiny_gap_model(rng, h=6, w=6, c=2, width=3, k=3):
    layers = [
        nd.Conv3x3(c, width, "conv0"),
        nd.ReLU(),
        nd.MaxPool2(),
        nd.GlobalAvgPool(),
        nd.Dense(width, k, "out"),
    ]
    return fill_random(nd.Model(layers, (h, w, c)), rng)


def random_small_model(rng):
    kind = rng.integers(3)
    if kind == 0:
        return tiny_dense_model(rng, d_in=int(rng.integers(3, 7)), hidden=int(rng.integers(4, 9)))
    if kind == 1:
        return tiny_conv_model(rng, h=int(rng.integers(4, 7)), w=int(rng.integers(4, 7)))
    return tiny_gap_model(rng)


def random_input(model, rng):
    return rng.uniform(0.0, 1.0, model.input_shape)


def random_target(rng, k, simplex=True):
    y = rng.uniform(0.05, 1.0, k)
    return y / y.sum() if simplex else y


def trained_blob_model(seed, k=3, dim=8, hidden=16, separation=6.0):
    """A small dense net fit to well-separated gaussian blobs, plus its
    held-out half. Used wherever a confident (non-uniform) model is needed."""
    from theftguard import dataio

    ds = dataio.synthetic(k_classes=k, dim=dim, n_per_class=100,
                          separation=separation, seed=seed)
    train, test = dataio.split(ds, (0.6, 0.4), seed=seed)
    model = nd.Model(
        [nd.Dense(dim, hidden, "fc0"), nd.ReLU(), nd.Dense(hidden, k, "out")], (dim,)
    )
    rng = np.random.default_rng(seed)
    for _, a in model.param_items():
        a[...] = rng.normal(scale=0.3, size=a.shape)
    loss = nd.LossFunction(nd.CROSS_ENTROPY)
    opt = nd.SGD(model, lr=0.2)
    ys = train.one_hot()
    for _ in range(60):
        nd.train_step(model, loss, (train.inputs, ys), opt)
    return model, test


def loss_value_at_params(model, loss, x, y):
    """Returns f(flat_params) -> loss value, restoring params afterwards."""
    x = np.asarray(x)[None, ...]
    y = np.asarray(y)[None, ...]
    saved = model.param_vector().flat.copy()

    def f(flat):
        model.set_params(flat)
        p, _, _ = model.forward_cached(x)
        value = loss.value(p, y)
        model.set_params(saved)
        return value

    return f, saved
