"""Output-distribution counter-attack: answer queries with labels nudged in
the direction that maximizes the norm of an imitator's training gradient.

For cross-entropy the parameter gradient is linear in the target,
g(y) = -sum_i y_i u_i with u_i the per-class log-probability gradients, so
the label-space gradient of ||g|| has the closed form

    d||g||/dy_j = -(u_j . g) / ||g||

and the defense step is y* = y + epsilon * sign of that vector, optionally
renormalized back toward the simplex.

The batched path used by the oracle avoids materializing any u_j: with
J the per-sample logit Jacobian, v = J g (one forward-mode tangent pass)
gives u_j . g = v_j - <p, v> and ||g||^2 = <b, v>, where b is the logit
gradient of the loss. A unit test pins this equal to the per-class path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndnet import CROSS_ENTROPY, grad_params, per_class_log_prob_grads

DEGENERATE_NORM = 1e-12

RENORM_NONE = "none"
RENORM_CENTERING = "centering"
RENORM_WTA = "wta"


class DegenerateGradientError(ArithmeticError):
    """The parameter gradient is numerically zero; no ascent direction exists."""


@dataclass(frozen=True)
class OutputPerturbationConfig:
    epsilon: float = 0.003
    renorm: str = RENORM_CENTERING
    centering_rounds: int = 5

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.renorm not in (RENORM_NONE, RENORM_CENTERING, RENORM_WTA):
            raise ValueError(f"unknown renormalization {self.renorm!r}")
        if not 1 <= self.centering_rounds <= 50:
            raise ValueError("centering_rounds must be in [1, 50]")


def direction_from_scores(u_dot_g, gnorm):
    """s_j = -(u_j . g)/||g|| given the precomputed dot products."""
    return -np.asarray(u_dot_g, dtype=np.float64) / gnorm


def gradient_norm_y_gradient(model, loss, x, y):
    """Gradient of y -> ||grad_params(model, loss, x, y)|| at fixed x, theta.

    Raises DegenerateGradientError when ||g|| falls below 1e-12, where the
    norm has no usable slope.
    """
    if loss.kind != CROSS_ENTROPY:
        raise ValueError("the label-space gradient is defined for cross-entropy")
    g = grad_params(model, loss, x, y)
    gnorm = g.norm()
    if not np.isfinite(gnorm) or gnorm < DEGENERATE_NORM:
        raise DegenerateGradientError(f"parameter gradient norm {gnorm} below threshold")
    us = per_class_log_prob_grads(model, x)
    dots = np.array([u.dot(g) for u in us])
    return direction_from_scores(dots, gnorm)


def counter_attack(model, loss, x, y_x, cfg):
    """Perturbed label distribution for one query (y_x = model's own output)."""
    y_x = np.asarray(y_x, dtype=np.float64)
    if cfg.epsilon == 0:
        return y_x.copy()
    try:
        s = gradient_norm_y_gradient(model, loss, x, y_x)
    except DegenerateGradientError:
        return y_x.copy()
    y_star = y_x + cfg.epsilon * np.sign(s)
    return _apply_renorm(y_x[None, :], y_star[None, :], cfg)[0]


def counter_attack_batch(model, loss, X, cfg, batch_size=64):
    """Defense responses for a batch of queries; returns (raw, defended).

    Semantically identical to calling counter_attack per input with the
    model's own prediction as y_x, but runs one reverse pass and one
    forward-mode tangent pass per chunk instead of K+1 backprops per sample.
    """
    if loss.kind != CROSS_ENTROPY:
        raise ValueError("the label-space gradient is defined for cross-entropy")
    X = np.asarray(X, dtype=np.float64)
    raw_out = []
    def_out = []
    for lo in range(0, len(X), batch_size):
        xb = X[lo:lo + batch_size]
        p, _, caches = model.forward_cached(xb)
        raw_out.append(p)
        if cfg.epsilon == 0:
            def_out.append(p.copy())
            continue
        b = loss.dz(p, p)
        _, ps_grads = model.backward_dz(b, caches, per_sample=True, need_dx=False)
        v = model.jvp_logits(caches, ps_grads)
        gn2 = (b * v).sum(axis=-1)
        ok = np.isfinite(gn2) & (gn2 >= DEGENERATE_NORM**2)
        gn = np.sqrt(np.where(ok, gn2, 1.0))
        u_dot_g = v - (p * v).sum(axis=-1, keepdims=True)
        s = direction_from_scores(u_dot_g, gn[:, None])
        y_star = p + cfg.epsilon * np.sign(s)
        y_star = _apply_renorm(p, y_star, cfg)
        y_star[~ok] = p[~ok]
        def_out.append(y_star)
    return np.concatenate(raw_out), np.concatenate(def_out)


# -- renormalization strategies ----------------------------------------------


def renorm_centering(y, y_star, rounds):
    """Repeatedly re-center the perturbation to zero mean and clip to [0,1]."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    y = np.asarray(y, dtype=np.float64)
    out = np.asarray(y_star, dtype=np.float64).copy()
    for _ in range(rounds):
        delta = out - y
        delta -= delta.mean(axis=-1, keepdims=True)
        out = np.clip(y + delta, 0.0, 1.0)
    return out


def renorm_winner_takes_all(y_star):
    """Move the missing/excess probability mass onto one entry.

    Entries are clipped to [0,1] first. A deficit is added to the minimum
    entry; an excess is taken from the maximum entry, cascading to the next
    highest when one entry cannot absorb it all. Ties break toward the
    lowest index. The result sums to 1 within a unit in the last place.
    """
    y = np.clip(np.asarray(y_star, dtype=np.float64), 0.0, 1.0)
    total = y.sum()
    if total < 1.0:
        y[np.argmin(y)] += 1.0 - total
    elif total > 1.0:
        excess = total - 1.0
        order = np.lexsort((np.arange(y.size), -y))
        for idx in order:
            take = min(y[idx], excess)
            y[idx] -= take
            excess -= take
            if excess <= 0:
                break
    # polish away the last rounding crumbs
    for _ in range(4):
        resid = y.sum() - 1.0
        if abs(resid) <= np.spacing(1.0):
            break
        j = int(np.argmax(y))
        y[j] -= resid
    return y


def _apply_renorm(y, y_star, cfg):
    if cfg.renorm == RENORM_NONE:
        return y_star
    if cfg.renorm == RENORM_CENTERING:
        return renorm_centering(y, y_star, cfg.centering_rounds)
    out = np.empty_like(y_star)
    for i in range(y_star.shape[0]):
        out[i] = renorm_winner_takes_all(y_star[i])
    return out
