"""Loss functions over softmax outputs: soft-target cross-entropy and MSE.

Both losses are evaluated on the softmax output p but differentiated with
respect to the logits z, which is what backpropagation consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CROSS_ENTROPY = "cross-entropy-with-soft-target"
MSE = "mean-squared-error"


@dataclass(frozen=True)
class LossFunction:
    kind: str = CROSS_ENTROPY
    eps: float = 1e-12  # inside the log; keeps the value finite on saturated outputs

    def __post_init__(self):
        if self.kind not in (CROSS_ENTROPY, MSE):
            raise ValueError(f"unknown loss kind: {self.kind!r}")
        if not self.eps > 0:
            raise ValueError("stability epsilon must be positive")

    def value(self, p, y):
        """Mean per-sample loss over the batch. p, y: (B, K)."""
        if self.kind == CROSS_ENTROPY:
            per = -(y * np.log(p + self.eps)).sum(axis=-1)
        else:
            per = ((p - y) ** 2).mean(axis=-1)
        return float(per.mean())

    def dz(self, p, y):
        """Per-sample gradient with respect to the logits, (B, K).

        Cross-entropy: c = -sum_i y_i log(p_i + eps). Chaining through the
        softmax Jacobian gives dz_j = p_j <y, r> - y_j r_j with
        r_i = p_i/(p_i + eps). The target is often the model's own output,
        where the two O(1) parts of that expression cancel and leave only
        eps-scale structure, so the cancellation is done symbolically:
        with q = eps/(p + eps) = 1 - r,

            dz = p * sum(y) - y + y*q - p * <y, q>

        which is exact, linear in y, and loses nothing to rounding when
        y is close to p.
        """
        if self.kind == CROSS_ENTROPY:
            q = self.eps / (p + self.eps)
            s = y.sum(axis=-1, keepdims=True)
            yq = (y * q).sum(axis=-1, keepdims=True)
            return p * s - y + y * q - p * yq
        dcdp = 2.0 * (p - y) / p.shape[-1]
        inner = (dcdp * p).sum(axis=-1, keepdims=True)
        return p * (dcdp - inner)
