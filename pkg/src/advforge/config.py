"""Flat key=value run configuration with dotted keys.

A RunConfig is the full set of defaults plus overrides from a config file
and repeated ``--set key=value`` flags.  Re-serialization is canonical
(sorted keys, one per line), so a config hash identifies a run.  Defaults
follow the published training protocol: eps 0.3, step 0.01, 40 attack
iterations, lambda1 = lambda2 = 0.5, Adam at 3e-4 dropped 10x at epoch 150,
batch size 64, 250 epochs.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .attacks import AttackConfig
from .models import ModelConfig
from .seeding import split_seed
from .training import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "seed": 0,
    "out_dir": "runs",
    "dataset.source": "mnist",  # mnist | synthetic
    "dataset.dir": "",  # empty: $ADVFORGE_DATA_DIR, then ./data/mnist
    "dataset.classes": 10,
    "dataset.side": 16,
    "dataset.train_size": 2000,
    "dataset.test_size": 512,
    "model.arch": "lenet",  # lenet | small_cnn
    "model.widths": "8,16,32",
    "train.regime": "cada",
    "train.epochs": 250,
    "train.batch_size": 64,
    "train.lr": 3e-4,
    "train.lr_drop_epoch": 150,
    "train.lr_drop_factor": 0.1,
    "train.lambda1": 0.5,
    "train.lambda2": 0.5,
    "train.eval_limit": 1024,
    "train.checkpoint_every": 0,
    "train.attack.epsilon": 0.3,
    "train.attack.step": 0.01,
    "train.attack.iterations": 40,
    "train.attack.random_start": True,
    "train.attack.label_source": "ground_truth",
    "eval.batch_size": 64,
    "eval.attack.epsilon": 0.3,
    "eval.attack.step": 0.01,
    "eval.attack.iterations": 40,
}


def _parse_value(key: str, raw: str, like: object):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"key {key}: expected {type(like).__name__}, got {raw!r}") from None
    return raw.strip()


def _format_value(v: object) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunConfig:
    """Resolved configuration: defaults overlaid with file values and overrides."""

    def __init__(self, values: dict[str, object] | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, _format_value(v) if not isinstance(v, str) else v)

    def set(self, key: str, raw: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse_value(key, raw, DEFAULTS[key])

    def __getitem__(self, key: str):
        return self.values[key]

    @staticmethod
    def load(path, overrides: list[str] | None = None) -> "RunConfig":
        cfg = RunConfig()
        if path is not None:
            text = Path(path).read_text()
            for lineno, line in enumerate(text.splitlines(), start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, raw = line.split("=", 1)
                cfg.set(key.strip(), raw)
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            cfg.set(key.strip(), raw)
        return cfg

    def canonical(self) -> str:
        return "\n".join(f"{k}={_format_value(self.values[k])}" for k in sorted(self.values)) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    # -- typed views ---------------------------------------------------

    def model_config(self) -> ModelConfig:
        if self["dataset.source"] == "mnist":
            in_shape, classes = (1, 28, 28), 10
        else:
            side = int(self["dataset.side"])
            in_shape, classes = (1, side, side), int(self["dataset.classes"])
        widths = tuple(int(w) for w in str(self["model.widths"]).split(",") if w)
        return ModelConfig(
            arch=str(self["model.arch"]),
            in_shape=in_shape,
            classes=classes,
            widths=widths,
            seed=split_seed(int(self["seed"]), "model-init"),
        )

    def train_attack_config(self) -> AttackConfig:
        return AttackConfig(
            epsilon=float(self["train.attack.epsilon"]),
            step=float(self["train.attack.step"]),
            iterations=int(self["train.attack.iterations"]),
            random_start=bool(self["train.attack.random_start"]),
            label_source=str(self["train.attack.label_source"]),
        )

    def eval_attack_config(self) -> AttackConfig:
        return AttackConfig(
            epsilon=float(self["eval.attack.epsilon"]),
            step=float(self["eval.attack.step"]),
            iterations=int(self["eval.attack.iterations"]),
            seed=split_seed(int(self["seed"]), "eval-attack"),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            regime=str(self["train.regime"]),
            epochs=int(self["train.epochs"]),
            batch_size=int(self["train.batch_size"]),
            lr=float(self["train.lr"]),
            lr_drop_epoch=int(self["train.lr_drop_epoch"]),
            lr_drop_factor=float(self["train.lr_drop_factor"]),
            lambda1=float(self["train.lambda1"]),
            lambda2=float(self["train.lambda2"]),
            attack=self.train_attack_config(),
            eval_attack=self.eval_attack_config(),
            eval_limit=int(self["train.eval_limit"]),
            seed=split_seed(int(self["seed"]), "train"),
        )
