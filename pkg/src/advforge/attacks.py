"""L-infinity bounded evasion attacks: single-step, iterative, and iterative
with random start, plus a surrogate-transfer wrapper for black-box evaluation.

All attacks maximize the same softmax cross-entropy used for training.  The
attacked model is read-only: its parameters are temporarily marked as
constants, so attack backward passes compute input gradients only and leave
any existing parameter gradients untouched.

Iterative attacks project onto [x - eps, x + eps] ∩ [0, 1] around the
original image after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import ImageBatch
from .engine import ShapeMismatch, Tensor, frozen, record
from .engine import ops
from .models import Classifier

LABEL_SOURCES = ("ground_truth", "model_predicted")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    step: float = 0.01
    iterations: int = 1
    random_start: bool = False
    label_source: str = "ground_truth"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.iterations > 1 and self.step <= 0.0:
            raise ValueError(f"step must be positive for iterative attacks, got {self.step}")
        if self.label_source not in LABEL_SOURCES:
            raise ValueError(f"label_source must be one of {LABEL_SOURCES}")


@dataclass
class AdversarialBatch:
    originals: ImageBatch
    perturbed: Tensor
    config: AttackConfig

    @property
    def labels(self) -> np.ndarray:
        return self.originals.labels

    def __len__(self) -> int:
        return len(self.originals)


def _resolve_labels(model: Classifier, batch: ImageBatch, cfg: AttackConfig) -> np.ndarray:
    if cfg.label_source == "ground_truth":
        return batch.labels
    return model.predict(batch.images)


def _input_gradient(model: Classifier, x_data: np.ndarray, labels: np.ndarray) -> np.ndarray:
    x = Tensor(x_data, requires_grad=True)
    with frozen(model.parameters()):
        with record() as tape:
            loss = ops.softmax_cross_entropy(model.logits(x), labels)
            tape.backward(loss)
    return x.grad


def fgsm(model: Classifier, batch: ImageBatch, cfg: AttackConfig) -> AdversarialBatch:
    """One signed-gradient step of size epsilon, clipped back to [0, 1]."""
    labels = _resolve_labels(model, batch, cfg)
    x = batch.images.data
    g = _input_gradient(model, x, labels)
    adv = np.clip(x + np.float32(cfg.epsilon) * np.sign(g), 0.0, 1.0)
    return AdversarialBatch(batch, Tensor(adv), cfg)


def _iterate(
    model: Classifier, batch: ImageBatch, cfg: AttackConfig, start: np.ndarray
) -> AdversarialBatch:
    if cfg.step <= 0.0:
        raise ValueError(f"iterative attacks need a positive step, got {cfg.step}")
    labels = _resolve_labels(model, batch, cfg)
    x = batch.images.data
    lo = np.maximum(x - np.float32(cfg.epsilon), np.float32(0.0))
    hi = np.minimum(x + np.float32(cfg.epsilon), np.float32(1.0))
    adv = start
    step = np.float32(cfg.step)
    for _ in range(cfg.iterations):
        g = _input_gradient(model, adv, labels)
        adv = np.clip(adv + step * np.sign(g), lo, hi)
    return AdversarialBatch(batch, Tensor(adv), cfg)


def bim(model: Classifier, batch: ImageBatch, cfg: AttackConfig) -> AdversarialBatch:
    """Iterative signed-gradient ascent with per-step projection, no random start."""
    return _iterate(model, batch, cfg, batch.images.data.copy())


def pgd(model: Classifier, batch: ImageBatch, cfg: AttackConfig) -> AdversarialBatch:
    """Iterative attack; when random_start is set, begins from a uniform point
    inside the epsilon ball (drawn from cfg.seed), clipped to [0, 1]."""
    x = batch.images.data
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(np.float32)
        start = np.clip(x + noise, 0.0, 1.0)
    else:
        start = x.copy()
    return _iterate(model, batch, cfg, start)


ATTACKS = {"fgsm": fgsm, "bim": bim, "pgd": pgd}


def transfer_attack(
    surrogate: Classifier,
    target: Classifier,
    batch: ImageBatch,
    attack: str,
    cfg: AttackConfig,
) -> AdversarialBatch:
    """Craft examples with the surrogate's gradients only; the target model
    is never queried during generation."""
    if surrogate.cfg.in_shape != target.cfg.in_shape or surrogate.cfg.classes != target.cfg.classes:
        raise ShapeMismatch(
            f"surrogate {surrogate.cfg.in_shape}/{surrogate.cfg.classes} classes and target "
            f"{target.cfg.in_shape}/{target.cfg.classes} classes do not match"
        )
    if attack not in ATTACKS:
        raise ValueError(f"unknown attack {attack!r}; expected one of {sorted(ATTACKS)}")
    return ATTACKS[attack](surrogate, batch, cfg)
