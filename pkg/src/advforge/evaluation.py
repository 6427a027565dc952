"""Accuracy measurement over the attack-by-setting grid and report emission.

White-box cells attack the evaluated model directly; black-box cells craft
examples on a separately trained surrogate and score them on the target.
Accuracies are fractions internally; percent formatting happens only when
writing CSV or printing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import ATTACKS, AdversarialBatch, AttackConfig, transfer_attack
from .checkpoint import canonical_json
from .data import DatasetHandle, ImageBatch, batches, take
from .engine import Tensor
from .models import Classifier
from .seeding import split_seed

ATTACK_KINDS = ("clean", "fgsm", "bim", "pgd")
SETTINGS = ("white", "black")


@dataclass(frozen=True)
class GridCell:
    attack: str  # clean | fgsm | bim | pgd
    setting: str = "white"
    config: AttackConfig | None = None  # None only for clean

    def __post_init__(self):
        if self.attack not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.attack!r}")
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.attack != "clean" and self.config is None:
            raise ValueError(f"attack cell {self.attack!r} needs an AttackConfig")

    @property
    def key(self) -> str:
        return self.attack if self.attack == "clean" else f"{self.attack}_{self.setting}"


@dataclass
class CellResult:
    attack: str
    setting: str
    epsilon: float
    step: float
    iterations: int
    accuracy: float
    n_examples: int

    @property
    def key(self) -> str:
        return self.attack if self.attack == "clean" else f"{self.attack}_{self.setting}"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EvalReport:
    dataset: str
    model_id: str
    surrogate_id: str | None
    cells: list[CellResult] = field(default_factory=list)

    def cell(self, key: str) -> CellResult:
        for c in self.cells:
            if c.key == key:
                return c
        raise KeyError(key)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model_id": self.model_id,
            "surrogate_id": self.surrogate_id,
            "cells": [c.to_dict() for c in self.cells],
        }

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        return EvalReport(
            dataset=d["dataset"],
            model_id=d["model_id"],
            surrogate_id=d["surrogate_id"],
            cells=[CellResult(**c) for c in d["cells"]],
        )


def accuracy(model: Classifier, batch) -> float:
    """Fraction of argmax predictions matching the true labels; accepts an
    ImageBatch or an AdversarialBatch (scored on its perturbed images)."""
    if isinstance(batch, AdversarialBatch):
        images, labels = batch.perturbed, batch.labels
    else:
        images, labels = batch.images, batch.labels
    return float(np.mean(model.predict(images) == labels))


def dataset_accuracy(model: Classifier, ds: DatasetHandle, batch_size: int = 256) -> float:
    hits = 0
    for batch in batches(ds, batch_size, seed=None):
        hits += int(np.sum(model.predict(batch.images) == batch.labels))
    return hits / ds.size


def _cell_accuracy(
    model: Classifier,
    surrogate: Classifier | None,
    ds: DatasetHandle,
    cell: GridCell,
    batch_size: int,
) -> CellResult:
    hits = 0
    for i, batch in enumerate(batches(ds, batch_size, seed=None)):
        if cell.attack == "clean":
            hits += int(np.sum(model.predict(batch.images) == batch.labels))
            continue
        cfg = replace(cell.config, seed=split_seed(cell.config.seed, f"{cell.key}/{i}"))
        if cell.setting == "white":
            adv = ATTACKS[cell.attack](model, batch, cfg)
        else:
            adv = transfer_attack(surrogate, model, batch, cell.attack, cfg)
        hits += int(np.sum(model.predict(adv.perturbed) == batch.labels))
    cfg = cell.config
    return CellResult(
        attack=cell.attack,
        setting=cell.setting if cell.attack != "clean" else "white",
        epsilon=cfg.epsilon if cfg else 0.0,
        step=cfg.step if cfg else 0.0,
        iterations=cfg.iterations if cfg else 0,
        accuracy=hits / ds.size,
        n_examples=ds.size,
    )


def evaluate_grid(
    model: Classifier,
    surrogate: Classifier | None,
    ds: DatasetHandle,
    cells: list[GridCell],
    batch_size: int = 64,
    model_id: str = "model",
    surrogate_id: str | None = None,
) -> EvalReport:
    """Fill every requested cell; each test item is scored exactly once per cell."""
    if any(c.setting == "black" and c.attack != "clean" for c in cells) and surrogate is None:
        raise ValueError("black-box cells requested but no surrogate model given")
    report = EvalReport(
        dataset=f"{ds.source}/{ds.split}",
        model_id=model_id,
        surrogate_id=surrogate_id if surrogate is not None else None,
    )
    for cell in cells:
        report.cells.append(_cell_accuracy(model, surrogate, ds, cell, batch_size))
    return report


def standard_grid(attack_cfg: AttackConfig, black_box: bool = False) -> list[GridCell]:
    """Clean plus fgsm/bim/pgd white-box cells, optionally the black-box trio.

    fgsm ignores iteration count; bim runs without random start; pgd with it.
    """
    cells = [GridCell("clean")]
    for setting in (("white", "black") if black_box else ("white",)):
        cells.append(GridCell("fgsm", setting, replace(attack_cfg, iterations=1, random_start=False)))
        cells.append(GridCell("bim", setting, replace(attack_cfg, random_start=False)))
        cells.append(GridCell("pgd", setting, replace(attack_cfg, random_start=True)))
    return cells


def export_features(model: Classifier, ds: DatasetHandle, limit: int, out_path) -> None:
    """First `limit` items of the unshuffled split as CSV rows of
    label followed by the feature vector."""
    if limit > ds.size:
        raise ValueError(f"limit {limit} exceeds dataset size {ds.size}")
    subset = take(ds, limit)
    width = model.feature_width
    lines = ["label," + ",".join(f"f{i}" for i in range(width))]
    for batch in batches(subset, 256, seed=None):
        feats = model.features(batch.images).data
        for label, row in zip(batch.labels, feats):
            lines.append(f"{int(label)}," + ",".join(f"{v:.9g}" for v in row))
    Path(out_path).write_text("\n".join(lines) + "\n")


def format_percent(fraction: float) -> str:
    return f"{100.0 * fraction:.2f}"


def report_row(report: EvalReport) -> str:
    """One Table-style line: model id then percent accuracy per cell."""
    parts = [report.model_id]
    for c in report.cells:
        parts.append(f"{c.key}={format_percent(c.accuracy)}")
    return "  ".join(parts)


def write_report(report: EvalReport, out_path, format: str = "json") -> None:
    path = Path(out_path)
    if format == "json":
        path.write_text(canonical_json(report.to_dict()) + "\n")
    elif format == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model"] + [c.key for c in report.cells])
            writer.writerow([report.model_id] + [format_percent(c.accuracy) for c in report.cells])
    else:
        raise ValueError(f"unknown report format {format!r}")


def read_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
