"""Architecture catalog: the ten attacker substitutes and the defender CNN.

Layer descriptors are ("conv", width), ("fc", width), ("gap",) and
("softmax", k). Every conv is a 3x3 stride-1 same-padding layer followed by
ReLU and a 2x2 max-pool; every fc is a dense layer followed by ReLU; the
terminal softmax descriptor is a dense projection whose output the model
normalizes. Checkpoints are a small versioned binary container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ndnet import Conv3x3, Dense, Flatten, GlobalAvgPool, MaxPool2, Model, ReLU


class ConstructionError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    id: str
    layers: tuple

    def __post_init__(self):
        kinds = [d[0] for d in self.layers]
        if not self.layers or kinds[-1] != "softmax":
            raise ConstructionError(f"{self.id}: last layer must be softmax")
        if "fc" in kinds and "conv" in kinds:
            if max(i for i, k in enumerate(kinds) if k == "conv") > min(
                i for i, k in enumerate(kinds) if k == "fc"
            ):
                raise ConstructionError(f"{self.id}: conv layers must precede fc layers")


_TABLE = {
    "X": (("conv", 64), ("conv", 128), ("softmax", 10)),
    "Y": (("conv", 64), ("conv", 128), ("conv", 128), ("softmax", 10)),
    "A": (("conv", 32), ("conv", 64), ("fc", 200), ("fc", 200), ("softmax", 10)),
    "F": (("conv", 32), ("conv", 64), ("fc", 200), ("softmax", 10)),
    "G": (("conv", 32), ("conv", 64), ("softmax", 10)),
    "H": (("conv", 32), ("fc", 200), ("fc", 200), ("softmax", 10)),
    "I": (("fc", 200), ("fc", 200), ("fc", 200), ("softmax", 10)),
    "J": (("fc", 1000), ("fc", 200), ("softmax", 10)),
    "K": (("fc", 1000), ("fc", 500), ("fc", 200), ("softmax", 10)),
    "L": (("conv", 32), ("fc", 1000), ("fc", 200), ("softmax", 10)),
}


def catalog():
    """The ten substitute architectures, keyed by their one-letter id."""
    return {k: ArchitectureSpec(k, v) for k, v in _TABLE.items()}


def defender_spec():
    """The defending model: three pooled conv blocks, global average pooling,
    softmax head. No hidden dense layers."""
    return ArchitectureSpec(
        "defender",
        (("conv", 32), ("conv", 64), ("conv", 128), ("gap",), ("softmax", 10)),
    )


def spec_for_id(spec_id):
    if spec_id == "defender":
        return defender_spec()
    cat = catalog()
    if spec_id in cat:
        return cat[spec_id]
    raise CheckpointError(f"unknown architecture id {spec_id!r}")


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build(spec, input_shape, seed):
    """Instantiate a spec at a given input shape with seeded initialization."""
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers = []
    n_conv = 0
    n_fc = 0
    for desc in spec.layers:
        kind = desc[0]
        if kind == "conv":
            if len(shape) != 3:
                raise ConstructionError(
                    f"{spec.id}: conv layer needs (H, W, C) input, has {shape}"
                )
            h, w, c = shape
            if h < 2 or w < 2:
                raise ConstructionError(
                    f"{spec.id}: spatial size {h}x{w} too small to pool"
                )
            width = desc[1]
            conv = Conv3x3(c, width, f"conv{n_conv}")
            conv.W[...] = _glorot(rng, conv.W.shape, 9 * c, 9 * width)
            layers += [conv, ReLU(), MaxPool2()]
            shape = (h // 2, w // 2, width)
            n_conv += 1
        elif kind == "fc":
            if len(shape) != 1:
                layers.append(Flatten())
                shape = (int(np.prod(shape)),)
            width = desc[1]
            fc = Dense(shape[0], width, f"fc{n_fc}")
            fc.W[...] = _glorot(rng, fc.W.shape, shape[0], width)
            layers += [fc, ReLU()]
            shape = (width,)
            n_fc += 1
        elif kind == "gap":
            if len(shape) != 3:
                raise ConstructionError(f"{spec.id}: gap needs (H, W, C) input")
            layers.append(GlobalAvgPool())
            shape = (shape[2],)
        elif kind == "softmax":
            if len(shape) != 1:
                layers.append(Flatten())
                shape = (int(np.prod(shape)),)
            k = desc[1]
            out = Dense(shape[0], k, "out")
            out.W[...] = _glorot(rng, out.W.shape, shape[0], k)
            layers += [out]
            shape = (k,)
        else:
            raise ConstructionError(f"{spec.id}: unknown layer kind {kind!r}")
    return Model(layers, input_shape, spec_id=spec.id)


# -- checkpoint container ----------------------------------------------------

_MAGIC = b"TGMD"
_VERSION = 1


def save_model(model, path):
    flat = model.param_vector().flat
    sid = model.spec_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(struct.pack("<B", len(sid)))
        fh.write(sid)
        fh.write(struct.pack("<B", len(model.input_shape)))
        for d in model.input_shape:
            fh.write(struct.pack("<I", d))
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.astype("<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise CheckpointError(f"bad magic: expected {_MAGIC!r}, found {raw[:4]!r}")
    try:
        off = 4
        (version,) = struct.unpack_from("<B", raw, off)
        off += 1
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (sid_len,) = struct.unpack_from("<B", raw, off)
        off += 1
        spec_id = raw[off:off + sid_len].decode("utf-8")
        off += sid_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        input_shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
    except struct.error as err:
        raise CheckpointError(f"checkpoint header truncated: {err}") from None
    if off + 8 * count != len(raw):
        raise CheckpointError("checkpoint truncated or trailing bytes present")
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    model = build(spec_for_id(spec_id), input_shape, seed=0)
    if model.num_params() != count:
        raise CheckpointError(
            f"parameter count mismatch: file has {count}, "
            f"{spec_id} at {input_shape} needs {model.num_params()}"
        )
    model.set_params(flat.astype(np.float64))
    return model
