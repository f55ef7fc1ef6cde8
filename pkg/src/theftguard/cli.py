"""Command-line entry points.

    theftguard train-defender --dataset-dir data/mnist --out out/
    theftguard run --preset desk --seed 7 --out out/
    theftguard summarize --report out/report.csv

Scenario files are flat key=value lines ('#' starts a comment). Recognized
keys mirror the CLI flags and scenario fields: dataset_dir, data_fraction,
eval_fraction, attackers (comma-separated ids), repetitions, base_seed,
defender_epochs, defender_lr, defender_lr_decay, defender_batch, rounds,
lambda, seed_count, epochs_per_round, lr, lr_decay, batch_size, binarize, defense
(on/off), epsilon, renorm (none/centering/wta), centering_rounds,
attack_epsilon. Command-line flags override file values, which override
preset defaults.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import dataio, harness, zoo
from .advcraft import accuracy
from .counterdef import OutputPerturbationConfig
from .theftsim import AugmentationConfig


def parse_scenario_file(path):
    kv = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            kv[key.strip()] = value.strip()
    return kv


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _build_scenario(args):
    if args.preset == "full":
        scenario = harness.full_scenario()
    else:
        scenario = harness.desk_scenario()

    kv = parse_scenario_file(args.scenario) if args.scenario else {}

    def pick(key, flag_value):
        if flag_value is not None:
            return flag_value
        return kv.get(key)

    aug = scenario.augmentation
    defense = scenario.defense

    simple = {
        "dataset_dir": str, "data_fraction": float, "eval_fraction": float,
        "defender_epochs": int, "defender_lr": float, "defender_lr_decay": float,
        "defender_batch": int, "attack_epsilon": float, "repetitions": int,
        "base_seed": int,
    }
    updates = {}
    for key, cast in simple.items():
        value = pick(key, getattr(args, key, None))
        if value is not None:
            updates[key] = cast(value)
    if pick("attackers", getattr(args, "attackers", None)) is not None:
        raw = pick("attackers", getattr(args, "attackers", None))
        updates["attacker_ids"] = tuple(x.strip() for x in str(raw).split(",") if x.strip())
    if args.seed is not None:
        updates["base_seed"] = args.seed

    aug_fields = {
        "rounds": int, "lambda": float, "seed_count": int, "epochs_per_round": int,
        "lr": float, "lr_decay": float, "batch_size": int,
    }
    aug_updates = {}
    for key, cast in aug_fields.items():
        value = kv.get(key)
        if value is not None:
            aug_updates["lam" if key == "lambda" else key] = cast(value)
    binarize = pick("binarize", True if args.binarize_attacker else None)
    if binarize is not None:
        aug_updates["binarize_labels"] = (
            binarize if isinstance(binarize, bool) else _BOOL[str(binarize).lower()]
        )
    if aug_updates:
        updates["augmentation"] = replace(aug, **aug_updates)

    defense_on = pick("defense", args.defense)
    if defense_on is not None:
        defense_on = defense_on if defense_on in ("on", "off") else (
            "on" if _BOOL[str(defense_on).lower()] else "off"
        )
    eps = pick("epsilon", args.epsilon)
    renorm = pick("renorm", args.renorm)
    rounds = kv.get("centering_rounds")
    if defense_on == "off":
        updates["defense"] = None
    else:
        base = defense or OutputPerturbationConfig()
        d_updates = {}
        if eps is not None:
            d_updates["epsilon"] = float(eps)
        if renorm is not None:
            d_updates["renorm"] = str(renorm)
        if rounds is not None:
            d_updates["centering_rounds"] = int(rounds)
        if d_updates or defense_on == "on":
            updates["defense"] = replace(base, **d_updates)

    return replace(scenario, **updates)


def _cmd_run(args):
    scenario = _build_scenario(args)
    report, trained = harness.run_scenario(scenario, progress=print)
    csv_path, summary_path = harness.emit(report, args.out, trained)
    print(f"wrote {csv_path} and {summary_path}")
    return 0


def _cmd_train_defender(args):
    dataset_dir = args.dataset_dir or "data/mnist"
    train = dataio.load_mnist(dataset_dir, "train")
    test = dataio.load_mnist(dataset_dir, "test")
    if args.data_fraction is not None and args.data_fraction < 1.0:
        train = dataio.split(
            train, [args.data_fraction, 1.0 - args.data_fraction], seed=args.seed or 0
        )[0]
    model = harness.train_defender(
        train,
        seed=args.seed or 0,
        epochs=args.defender_epochs or 3,
        lr=args.defender_lr or 0.05,
        lr_decay=args.defender_lr_decay or 0.7,
        batch_size=args.defender_batch or 64,
        progress=print,
    )
    acc = accuracy(model, test)
    print(f"test accuracy: {acc:.4f}")
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "defender.tgmd")
    zoo.save_model(model, path)
    print(f"wrote {path}")
    return 0


def _cmd_summarize(args):
    report = harness.read_report(args.report)
    sys.stdout.write(harness.summarize(report))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="theftguard",
        description="model-theft simulation with an output-poisoning defense",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--dataset-dir", dest="dataset_dir", default=None)
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=None)

    p_run = sub.add_parser("run", help="run a theft scenario and write reports")
    add_common(p_run)
    p_run.add_argument("--preset", choices=("desk", "full"), default="desk")
    p_run.add_argument("--scenario", default=None, help="key=value scenario file")
    p_run.add_argument("--defense", choices=("on", "off"), default=None)
    p_run.add_argument("--epsilon", type=float, default=None)
    p_run.add_argument("--renorm", choices=("none", "centering", "wta"), default=None)
    p_run.add_argument("--binarize-attacker", action="store_true")
    p_run.add_argument("--attackers", default=None, help="comma-separated attacker ids")
    p_run.set_defaults(func=_cmd_run)

    p_td = sub.add_parser("train-defender", help="train and checkpoint the defender")
    add_common(p_td)
    p_td.add_argument("--data-fraction", dest="data_fraction", type=float, default=None)
    p_td.add_argument("--epochs", dest="defender_epochs", type=int, default=None)
    p_td.add_argument("--lr", dest="defender_lr", type=float, default=None)
    p_td.add_argument("--lr-decay", dest="defender_lr_decay", type=float, default=None)
    p_td.add_argument("--batch", dest="defender_batch", type=int, default=None)
    p_td.set_defaults(func=_cmd_train_defender)

    p_sum = sub.add_parser("summarize", help="print the summary table for a report.csv")
    p_sum.add_argument("--report", required=True)
    p_sum.set_defaults(func=_cmd_summarize)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"theftguard: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
