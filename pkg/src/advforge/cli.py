"""Command-line surface: train | attack | eval | export-features.

Exit codes: 0 success, 1 configuration or flag errors, 2 data or checkpoint
errors, 3 training aborted on a non-finite loss.  Every run is reproducible
from its config file plus the master seed; training artifacts land in a run
directory named by config hash and timestamp.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint, evaluation, training
from .attacks import ATTACKS, AttackConfig
from .config import ConfigError, RunConfig
from .data import DataError, DatasetHandle, load_mnist, make_synthetic
from .models import Discriminator, build_classifier
from .seeding import split_seed

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


def _dataset_from_config(cfg: RunConfig, split: str) -> DatasetHandle:
    if cfg["dataset.source"] == "mnist":
        directory = str(cfg["dataset.dir"]) or None
        return load_mnist(directory, split=split)
    n = int(cfg["dataset.train_size"] if split == "train" else cfg["dataset.test_size"])
    return make_synthetic(
        n=n,
        classes=int(cfg["dataset.classes"]),
        side=int(cfg["dataset.side"]),
        seed=split_seed(int(cfg["seed"]), f"dataset/{split}"),
        split=split,
    )


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-source", default="mnist", choices=("mnist", "synthetic"),
                   help="dataset family (default: mnist)")
    p.add_argument("--data-dir", default=None,
                   help="dataset directory (default: $ADVFORGE_DATA_DIR, then ./data/mnist)")
    p.add_argument("--split", default="test", choices=("train", "test"),
                   help="dataset split (default: test)")
    p.add_argument("--classes", type=int, default=10, help="synthetic: class count (default: 10)")
    p.add_argument("--side", type=int, default=16, help="synthetic: image side (default: 16)")
    p.add_argument("--n", type=int, default=512, help="synthetic: item count (default: 512)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")


def _dataset_from_flags(args) -> DatasetHandle:
    if args.data_source == "mnist":
        return load_mnist(args.data_dir, split=args.split)
    return make_synthetic(
        n=args.n, classes=args.classes, side=args.side,
        seed=split_seed(args.seed, f"dataset/{args.split}"), split=args.split,
    )


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=0.3,
                   help="L-inf budget on the [0,1] pixel scale (default: 0.3)")
    p.add_argument("--step", type=float, default=0.01,
                   help="per-iteration step size (default: 0.01)")
    p.add_argument("--iters", type=int, default=40,
                   help="iteration count for bim/pgd (default: 40)")
    p.add_argument("--random-start", action="store_true",
                   help="start from a uniform point inside the epsilon ball (pgd)")
    p.add_argument("--label-source", default="ground_truth",
                   choices=("ground_truth", "model_predicted"),
                   help="labels used in the attack loss (default: ground_truth)")


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, args.set)
    run_dir = Path(str(cfg["out_dir"])) / f"{cfg.digest()}-{time.strftime('%Y%m%d-%H%M%S')}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(cfg.canonical())

    train_ds = _dataset_from_config(cfg, "train")
    eval_ds = _dataset_from_config(cfg, "test")
    model = build_classifier(cfg.model_config())
    tc = cfg.train_config()
    disc = None
    if tc.regime in training.ADAPTATION_REGIMES:
        disc = Discriminator(
            model.feature_width, model.cfg.classes,
            seed=split_seed(int(cfg["seed"]), "disc-init"),
        )
    model, log = training.train(
        model, disc, train_ds, tc, eval_dataset=eval_ds,
        checkpoint_dir=run_dir, checkpoint_every=int(cfg["train.checkpoint_every"]),
    )
    (run_dir / "trainlog.jsonl").write_text(log.to_jsonl())
    last = log.records[-1]
    print(
        f"[{tc.regime}] epoch {last.epoch}: clean_acc={last.clean_acc:.4f} "
        f"adv_acc={last.adv_acc:.4f} clean_loss={last.clean_loss:.4f}"
    )
    print(f"artifacts: {run_dir}")
    return EXIT_OK


def cmd_attack(args) -> int:
    model = checkpoint.load_classifier(args.checkpoint)
    ds = _dataset_from_flags(args)
    if args.limit:
        from .data import take

        ds = take(ds, min(args.limit, ds.size))
    cfg = AttackConfig(
        epsilon=args.epsilon, step=args.step, iterations=args.iters,
        random_start=args.random_start, label_source=args.label_source, seed=args.seed,
    )
    from .data import batches

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    originals, perturbed, labels = [], [], []
    hits = clean_hits = 0
    for i, batch in enumerate(batches(ds, args.batch_size, seed=None)):
        adv = ATTACKS[args.attack](model, batch, replace(cfg, seed=split_seed(args.seed, f"batch/{i}")))
        originals.append(batch.images.data)
        perturbed.append(adv.perturbed.data)
        labels.append(batch.labels)
        hits += int(np.sum(model.predict(adv.perturbed) == batch.labels))
        clean_hits += int(np.sum(model.predict(batch.images) == batch.labels))
    records = [
        ("originals", np.concatenate(originals)),
        ("perturbed", np.concatenate(perturbed)),
        ("labels", np.concatenate(labels).astype(np.float32)),
    ]
    checkpoint.save_tensors(out / "adversarial.advf", records, {"kind": "adversarial_batch"})
    sidecar = {
        "attack": args.attack,
        "epsilon": args.epsilon,
        "step": args.step,
        "iterations": args.iters,
        "random_start": args.random_start,
        "label_source": args.label_source,
        "seed": args.seed,
        "n_examples": ds.size,
        "accuracy": hits / ds.size,
        "clean_accuracy": clean_hits / ds.size,
    }
    (out / "attack.json").write_text(checkpoint.canonical_json(sidecar) + "\n")
    print(f"{args.attack}: accuracy {hits / ds.size:.4f} (clean {clean_hits / ds.size:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = checkpoint.load_classifier(args.checkpoint)
    surrogate = checkpoint.load_classifier(args.surrogate) if args.surrogate else None
    if args.black_box and surrogate is None:
        print("error: --black-box requires --surrogate", file=sys.stderr)
        return EXIT_CONFIG
    ds = _dataset_from_flags(args)
    cfg = AttackConfig(
        epsilon=args.epsilon, step=args.step, iterations=args.iters, seed=args.seed,
    )
    cells = evaluation.standard_grid(cfg, black_box=args.black_box)
    report = evaluation.evaluate_grid(
        model, surrogate, ds, cells, batch_size=args.batch_size,
        model_id=args.model_id,
        surrogate_id=args.surrogate_id if surrogate is not None else None,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_report(report, out / "report.json", "json")
    evaluation.write_report(report, out / "report.csv", "csv")
    print(evaluation.report_row(report))
    return EXIT_OK


def cmd_export_features(args) -> int:
    model = checkpoint.load_classifier(args.checkpoint)
    ds = _dataset_from_flags(args)
    if args.limit > ds.size:
        print(
            f"error: limit {args.limit} exceeds dataset size {ds.size}", file=sys.stderr
        )
        return EXIT_CONFIG
    evaluation.export_features(model, ds, args.limit, args.out)
    print(f"wrote {args.limit} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advforge",
        description="Adversarial robustness sandbox: training, attacks, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model per a config file")
    p.add_argument("--config", default=None, help="key=value config file (defaults if omitted)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="craft adversarial examples from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="classifier checkpoint (.advf)")
    p.add_argument("--attack", required=True, choices=sorted(ATTACKS),
                   help="attack kind")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--limit", type=int, default=0, help="attack only the first N items")
    p.add_argument("--batch-size", type=int, default=64, help="attack batch size (default: 64)")
    _add_attack_flags(p)
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="accuracy grid over clean/fgsm/bim/pgd cells")
    p.add_argument("--checkpoint", required=True, help="classifier checkpoint (.advf)")
    p.add_argument("--surrogate", default=None, help="surrogate checkpoint for black-box cells")
    p.add_argument("--black-box", action="store_true", help="also fill black-box cells")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--batch-size", type=int, default=64, help="evaluation batch size (default: 64)")
    p.add_argument("--model-id", default="model", help="row label in reports (default: model)")
    p.add_argument("--surrogate-id", default="surrogate", help="surrogate label in reports")
    _add_attack_flags(p)
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-features", help="dump feature vectors as CSV")
    p.add_argument("--checkpoint", required=True, help="classifier checkpoint (.advf)")
    p.add_argument("--limit", type=int, required=True, help="number of rows to export")
    p.add_argument("--out", required=True, help="output CSV path")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, checkpoint.CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except training.TrainingDiverged as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
