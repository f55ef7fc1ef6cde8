"""Flat parameter vectors with named, shaped segments."""

from __future__ import annotations

import numpy as np


class ParamVector:
    """All trainable weights of a model as one float64 vector.

    Keeps an ordered segment table (id, shape) so the flat view and the
    per-layer arrays convert back and forth without loss.
    """

    def __init__(self, segments, flat):
        self.segments = list(segments)
        self.flat = np.asarray(flat, dtype=np.float64)
        want = sum(int(np.prod(s)) for _, s in self.segments)
        if self.flat.ndim != 1 or self.flat.size != want:
            raise ValueError(
                f"flat length {self.flat.size} does not match segments ({want})"
            )

    @classmethod
    def from_arrays(cls, pairs):
        segments = [(name, tuple(a.shape)) for name, a in pairs]
        if pairs:
            flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in pairs])
        else:
            flat = np.zeros(0)
        return cls(segments, flat)

    def to_arrays(self):
        out = []
        off = 0
        for name, shape in self.segments:
            n = int(np.prod(shape))
            out.append((name, self.flat[off:off + n].reshape(shape)))
            off += n
        return out

    def copy(self):
        return ParamVector(self.segments, self.flat.copy())

    def dot(self, other):
        return float(np.dot(self.flat, other.flat))

    def norm(self):
        return float(np.linalg.norm(self.flat))

    def __len__(self):
        return self.flat.size

    def __add__(self, other):
        return ParamVector(self.segments, self.flat + other.flat)

    def __sub__(self, other):
        return ParamVector(self.segments, self.flat - other.flat)

    def __mul__(self, scalar):
        return ParamVector(self.segments, self.flat * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return f"ParamVector({len(self.segments)} segments, {self.flat.size} values)"
