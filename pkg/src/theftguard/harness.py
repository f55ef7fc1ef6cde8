"""Experiment orchestration: scenarios, repetitions, metrics, reports.

A scenario bundles everything one attacker-vs-defender measurement needs.
run_scenario executes it end to end: per repetition it trains a defender,
wraps it in an oracle (defended or not), runs every configured attacker,
and records the metrics. Reports go to CSV (one row per attacker-id x
repetition x metric) plus a human-readable summary table; identical
scenario + base seed reproduce the CSV byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataio, zoo
from .advcraft import InputPerturbationConfig, accuracy, transfer_attack_accuracy
from .counterdef import OutputPerturbationConfig, counter_attack_batch
from .ndnet import SGD, LossFunction, train_step
from .theftsim import AugmentationConfig, Oracle, run_theft

CSV_HEADER = "attacker_id,repetition,metric,value"


@dataclass
class TheftScenario:
    dataset_dir: str = "data/mnist"
    data_fraction: float = 1.0       # stratified slice of the training set (defender + seed pool)
    eval_fraction: float = 1.0       # stratified slice of the test set used for metrics
    defender_epochs: int = 3
    defender_lr: float = 0.05
    defender_lr_decay: float = 0.7   # per epoch
    defender_batch: int = 64
    attacker_ids: tuple = ("A", "I", "X")
    defense: OutputPerturbationConfig | None = field(
        default_factory=OutputPerturbationConfig
    )
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    attack_epsilon: float = 0.3
    repetitions: int = 3
    base_seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        unknown = set(self.attacker_ids) - set(zoo.catalog())
        if unknown:
            raise ValueError(f"unknown attacker ids: {sorted(unknown)}")


def desk_scenario(**overrides):
    """Small but complete: 3 attacker families, 3 repetitions, 4 rounds,
    a tenth of MNIST. Runs in minutes and touches every code path.

    The substitute schedule (constant lr, batch 48) is calibrated so that
    augmentation keeps paying through the last round at this data scale;
    the per-round lr halving that AugmentationConfig defaults to is tuned
    for longer horizons and stalls fully-connected substitutes here.
    """
    base = TheftScenario(
        data_fraction=0.1,
        eval_fraction=0.1,
        defender_epochs=3,
        attacker_ids=("A", "I", "X"),
        augmentation=AugmentationConfig(rounds=4, lr_decay=1.0, batch_size=48),
        repetitions=3,
    )
    return replace(base, **overrides)


def full_scenario(**overrides):
    """The complete measurement grid; hours of CPU, not for routine runs."""
    base = TheftScenario(
        data_fraction=1.0,
        eval_fraction=1.0,
        defender_epochs=10,
        attacker_ids=tuple(sorted(zoo.catalog())),
        augmentation=AugmentationConfig(rounds=6, lr_decay=1.0, batch_size=48),
        repetitions=10,
    )
    return replace(base, **overrides)


@dataclass
class RunReport:
    rows: list  # (attacker_id, repetition, metric, value)

    def value(self, attacker_id, repetition, metric):
        for a, r, m, v in self.rows:
            if (a, r, m) == (attacker_id, repetition, metric):
                return v
        raise KeyError((attacker_id, repetition, metric))

    def metrics(self):
        seen = []
        for _, _, m, _ in self.rows:
            if m not in seen:
                seen.append(m)
        return seen

    def attacker_ids(self):
        seen = []
        for a, _, _, _ in self.rows:
            if a not in seen:
                seen.append(a)
        return seen


def train_defender(pool, seed, epochs, lr, lr_decay=0.7, batch_size=64, progress=None):
    """Train the defender CNN on a dataset; deterministic in the seed."""
    model = zoo.build(zoo.defender_spec(), pool.inputs.shape[1:], seed=seed)
    loss = LossFunction()
    rng = np.random.default_rng(seed)
    targets = pool.one_hot()
    for epoch in range(epochs):
        opt = SGD(model, lr=lr * (lr_decay ** epoch))
        order = rng.permutation(len(pool))
        losses = []
        for lo in range(0, len(pool), batch_size):
            idx = order[lo:lo + batch_size]
            value, _ = train_step(model, loss, (pool.inputs[idx], targets[idx]), opt)
            losses.append(value)
        if progress:
            progress(f"defender epoch {epoch + 1}/{epochs}: loss {np.mean(losses):.4f}")
    return model


def argmax_unchanged_fraction(model, xs, defense, loss=None, batch_size=64):
    """Fraction of inputs whose top class survives the counter-attack."""
    loss = loss or LossFunction()
    raw, defended = counter_attack_batch(model, loss, xs, defense, batch_size)
    return float((raw.argmax(axis=-1) == defended.argmax(axis=-1)).mean())


def run_scenario(s: TheftScenario, progress=None):
    say = progress or (lambda msg: None)
    train = dataio.load_mnist(s.dataset_dir, "train")
    test = dataio.load_mnist(s.dataset_dir, "test")
    if s.data_fraction < 1.0:
        train = dataio.split(train, [s.data_fraction, 1.0 - s.data_fraction], seed=s.base_seed)[0]
    if s.eval_fraction < 1.0:
        test = dataio.split(test, [s.eval_fraction, 1.0 - s.eval_fraction], seed=s.base_seed)[0]

    atk_cfg = InputPerturbationConfig(epsilon=s.attack_epsilon)
    rows = []
    trained = {}
    for rep in range(s.repetitions):
        seed = s.base_seed + rep
        say(f"repetition {rep}: training defender (seed {seed})")
        defender = train_defender(
            train, seed, s.defender_epochs, s.defender_lr, s.defender_lr_decay,
            s.defender_batch, progress=say,
        )
        clean_acc = accuracy(defender, test)
        say(f"repetition {rep}: defender clean accuracy {clean_acc:.4f}")
        if s.defense is not None:
            unchanged = argmax_unchanged_fraction(defender, test.inputs, s.defense)
        else:
            unchanged = 1.0
        trained[("defender", rep)] = defender

        for i, aid in enumerate(s.attacker_ids):
            oracle = Oracle(defender, defense=s.defense)
            theft_seed = seed + 1000 * (i + 1)
            sub, trace = run_theft(
                oracle, zoo.catalog()[aid], train, s.augmentation, theft_seed,
                eval_set=test,
            )
            transfer = transfer_attack_accuracy(defender, sub, test, atk_cfg)
            say(
                f"repetition {rep}: attacker {aid} baseline {trace[0]['accuracy']:.3f} "
                f"final {trace[-1]['accuracy']:.3f} transfer {transfer:.3f}"
            )
            rows.append((aid, rep, "defender_clean_accuracy", clean_acc))
            rows.append((aid, rep, "argmax_unchanged", unchanged))
            rows.append((aid, rep, "seed_baseline_accuracy", trace[0]["accuracy"]))
            rows.append((aid, rep, "substitute_accuracy", trace[-1]["accuracy"]))
            rows.append((aid, rep, "transfer_attack_accuracy", transfer))
            rows.append((aid, rep, "oracle_queries", float(oracle.query_count)))
            for entry in trace:
                rows.append((
                    aid, rep, f"grad_norm_round_{entry['round']}", entry["mean_grad_norm"],
                ))
            trained[(aid, rep)] = sub
    return RunReport(rows), trained


def summarize(report: RunReport):
    """Mean and sample standard deviation per metric per attacker, as text."""
    lines = []
    metrics = report.metrics()
    ids = report.attacker_ids()
    width = max(len(m) for m in metrics) + 2
    header = "metric".ljust(width) + "".join(a.center(18) for a in ids)
    lines.append(header)
    lines.append("-" * len(header))
    for m in metrics:
        cells = []
        for a in ids:
            vals = [v for aa, _, mm, v in report.rows if aa == a and mm == m]
            mean = float(np.mean(vals))
            sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            cells.append(f"{mean:.3f} ({sd:.3f})".center(18))
        lines.append(m.ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"


def emit(report: RunReport, out_dir, trained=None):
    """Write report.csv (full precision) and summary.txt; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for a, r, m, v in report.rows:
            fh.write(f"{a},{r},{m},{v!r}\n")
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write(summarize(report))
    if trained:
        for (name, rep), model in trained.items():
            zoo.save_model(model, os.path.join(out_dir, f"{name}_rep{rep}.tgmd"))
    return csv_path, summary_path


def read_report(csv_path):
    rows = []
    with open(csv_path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header!r}")
        for line in fh:
            a, r, m, v = line.rstrip("\n").split(",")
            rows.append((a, int(r), m, float(v)))
    return RunReport(rows)
