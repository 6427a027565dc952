"""Loss functions, Adam, and the five training regimes.

Regimes and their per-batch update schedules (adversaries are regenerated
with the iterative random-start attack against the current model every
iteration):

  vanilla  minimize clean cross-entropy.
  at       minimize clean + adversarial cross-entropy through the
           classifier head (the only regime whose head sees adversaries).
  da       step A: discriminator (trunk + domain head) on the least-squares
           domain loss with features held constant; step B: classifier on
           clean loss + lambda2 * domain loss with switched labels and the
           discriminator held constant.
  ca       one joint step of classifier plus discriminator trunk + class
           head on clean loss + lambda1 * adversarial class loss.
  cada     da's step A, then step B updating classifier and trunk + class
           head on clean + lambda1 * class + lambda2 * switched-domain loss.

Domain targets are 1 for clean features and 0 for adversarial ones on the
discriminator side, switched on the generator side.  In every regime except
``at``, the classifier head receives no gradient from adversarial examples;
adversarial labels reach the feature extractor only through the
discriminator's class head.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .attacks import AdversarialBatch, AttackConfig, pgd
from .data import DataError, DatasetHandle, ImageBatch, batches, take
from .engine import ShapeMismatch, Tensor, frozen, record
from .engine import ops
from .models import Classifier, Discriminator
from .seeding import split_seed

REGIMES = ("vanilla", "at", "da", "ca", "cada")
ADAPTATION_REGIMES = ("da", "ca", "cada")


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; silent divergence would mask
    minimax instability."""


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "vanilla"
    epochs: int = 10
    batch_size: int = 64
    lr: float = 3e-4
    lr_drop_epoch: int = 150
    lr_drop_factor: float = 0.1
    lambda1: float = 0.5
    lambda2: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    attack: AttackConfig = field(
        default_factory=lambda: AttackConfig(
            epsilon=0.3, step=0.01, iterations=40, random_start=True
        )
    )
    eval_attack: AttackConfig | None = None  # defaults to `attack`
    eval_limit: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class EpochRecord:
    epoch: int
    clean_loss: float
    adv_loss: float
    disc_loss: float
    clean_acc: float
    adv_acc: float
    wall_time: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainLog:
    regime: str
    records: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        import json

        lines = [json.dumps({"regime": self.regime, **r.to_dict()}, sort_keys=True)
                 for r in self.records]
        return "\n".join(lines) + ("\n" if lines else "")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Initial rate until the drop epoch, then multiplied by the drop factor."""
    if epoch < cfg.lr_drop_epoch:
        return cfg.lr
    return cfg.lr * cfg.lr_drop_factor


class Adam:
    """Standard Adam with bias correction; one instance per parameter group."""

    def __init__(self, params: list[Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"gradient {g.shape} does not match parameter {p.data.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / np.float32(bc1)
            v_hat = self.v[i] / np.float32(bc2)
            p.data -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(self.eps))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# losses


def loss_clean(model: Classifier, batch: ImageBatch) -> Tensor:
    """Mean cross-entropy of the classifier on clean images."""
    return ops.softmax_cross_entropy(model.logits(batch.images), batch.labels)


def loss_adv_class(model: Classifier, disc: Discriminator, adv: AdversarialBatch) -> Tensor:
    """Mean cross-entropy of the discriminator's class head on adversarial
    features; gradients reach both the feature extractor and trunk + class head."""
    z = model.features(adv.perturbed)
    return ops.softmax_cross_entropy(disc.class_logits(z), adv.labels)


def _mean_sq_to(score: Tensor, target: float) -> Tensor:
    if target == 0.0:
        d = score
    else:
        d = ops.subtract(score, Tensor(np.full(score.shape, target, dtype=np.float32)))
    return ops.mean(ops.multiply(d, d))


def _constant_features(model: Classifier, x: Tensor) -> Tensor:
    with frozen(model.parameters()):
        return model.features(x)


def loss_domain(
    model: Classifier,
    disc: Discriminator,
    clean: ImageBatch,
    adv: AdversarialBatch,
    side: str,
    z_clean: Tensor | None = None,
    z_adv: Tensor | None = None,
) -> Tensor:
    """Least-squares domain loss, normalized per sub-batch.

    discriminator side: mean (h_d(z_clean) - 1)^2 + mean h_d(z_adv)^2 with
    features constant, so only the discriminator learns to separate.
    generator side: the adversarial sub-batch with its domain label switched
    to clean, mean (h_d(z_adv) - 1)^2, with the discriminator constant, so
    the gradient reaches the feature extractor only.  As in GAN generator
    updates, the clean sub-batch is left out of the switched objective:
    including it with the switched label rewards swapping the two feature
    distributions instead of aligning them, which empirically stalls
    robustness at zero.  Precomputed features may be passed to share
    forward work.
    """
    if len(clean) != len(adv):
        raise DataError(f"sub-batch sizes differ: {len(clean)} clean vs {len(adv)} adversarial")
    if side == "discriminator":
        zc = z_clean.detach() if z_clean is not None else _constant_features(model, clean.images)
        za = z_adv.detach() if z_adv is not None else _constant_features(model, adv.perturbed)
        return ops.add(
            _mean_sq_to(disc.domain_score(zc), 1.0),
            _mean_sq_to(disc.domain_score(za), 0.0),
        )
    if side == "generator":
        za = z_adv if z_adv is not None else model.features(adv.perturbed)
        with frozen(disc.parameters()):
            return _mean_sq_to(disc.domain_score(za), 1.0)
    raise ValueError(f"side must be 'discriminator' or 'generator', got {side!r}")


# ---------------------------------------------------------------------------
# training


def _check_finite(value: float, what: str, regime: str, epoch: int, it: int) -> float:
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"{what} became {value} in regime {regime} at epoch {epoch}, iteration {it}"
        )
    return value


def _train_attack(cfg: TrainConfig, epoch: int, it: int) -> AttackConfig:
    return replace(cfg.attack, seed=split_seed(cfg.seed, f"attack/{epoch}/{it}"))


def train(
    model: Classifier,
    disc: Discriminator | None,
    dataset: DatasetHandle,
    cfg: TrainConfig,
    eval_dataset: DatasetHandle | None = None,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
):
    """Run cfg.regime over the dataset; returns (model, TrainLog).

    The per-epoch log row is measured on a held-out pass over
    ``eval_dataset`` (or the training set when absent), truncated to
    cfg.eval_limit items.
    """
    regime = cfg.regime
    if regime in ADAPTATION_REGIMES and disc is None:
        raise ValueError(f"regime {regime!r} requires a discriminator")
    if regime not in ADAPTATION_REGIMES and disc is not None:
        raise ValueError(f"regime {regime!r} does not take a discriminator")

    opt_cls_params = model.parameters()
    opt_disc = None
    if regime in ("ca", "cada"):
        opt_cls_params = opt_cls_params + disc.trunk_params() + disc.class_head_params()
    if regime in ("da", "cada"):
        opt_disc = Adam(
            disc.trunk_params() + disc.domain_head_params(),
            beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps_adam,
        )
    opt_cls = Adam(opt_cls_params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps_adam)

    log = TrainLog(regime=regime)
    held_out = eval_dataset if eval_dataset is not None else dataset

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        for it, batch in enumerate(
            batches(dataset, cfg.batch_size, seed=split_seed(cfg.seed, f"shuffle/{epoch}"))
        ):
            _step(regime, model, disc, batch, cfg, opt_cls, opt_disc, lr, epoch, it)
        wall = time.perf_counter() - t0
        rec = _epoch_eval(model, disc, held_out, cfg, epoch, wall)
        log.records.append(rec)
        if checkpoint_dir is not None and checkpoint_every and epoch % checkpoint_every == 0:
            checkpoint.save_classifier(model, f"{checkpoint_dir}/epoch_{epoch:03d}.advf")
    if checkpoint_dir is not None:
        checkpoint.save_classifier(model, f"{checkpoint_dir}/final.advf")
    return model, log


def _step(regime, model, disc, batch, cfg, opt_cls, opt_disc, lr, epoch, it):
    if regime == "vanilla":
        with record() as tape:
            loss = loss_clean(model, batch)
            _check_finite(loss.item(), "clean loss", regime, epoch, it)
            tape.backward(loss)
        opt_cls.step(lr)
        opt_cls.zero_grad()
        return

    adv = pgd(model, batch, _train_attack(cfg, epoch, it))

    if regime == "at":
        with record() as tape:
            adv_ce = ops.softmax_cross_entropy(model.logits(adv.perturbed), adv.labels)
            loss = ops.add(loss_clean(model, batch), adv_ce)
            _check_finite(loss.item(), "training loss", regime, epoch, it)
            tape.backward(loss)
        opt_cls.step(lr)
        opt_cls.zero_grad()
        return

    if regime == "ca":
        with record() as tape:
            loss = ops.add(
                loss_clean(model, batch),
                ops.scale(loss_adv_class(model, disc, adv), cfg.lambda1),
            )
            _check_finite(loss.item(), "training loss", regime, epoch, it)
            tape.backward(loss)
        opt_cls.step(lr)
        opt_cls.zero_grad()
        return

    # da / cada: one discriminator step (A), then one classifier step (B);
    # the expensive feature forwards are shared between the two.
    with record() as tape_b:
        z_clean = model.features(batch.images)
        z_adv = model.features(adv.perturbed)

        with record() as tape_a:
            d_loss = ops.scale(
                loss_domain(model, disc, batch, adv, "discriminator",
                            z_clean=z_clean, z_adv=z_adv),
                cfg.lambda2,
            )
            _check_finite(d_loss.item(), "discriminator loss", regime, epoch, it)
            tape_a.backward(d_loss)
        opt_disc.step(lr)
        opt_disc.zero_grad()

        loss = ops.softmax_cross_entropy(model.head_logits(z_clean), batch.labels)
        if regime == "cada":
            adv_class = ops.softmax_cross_entropy(disc.class_logits(z_adv), adv.labels)
            loss = ops.add(loss, ops.scale(adv_class, cfg.lambda1))
        gen = loss_domain(model, disc, batch, adv, "generator", z_clean=z_clean, z_adv=z_adv)
        loss = ops.add(loss, ops.scale(gen, cfg.lambda2))
        _check_finite(loss.item(), "training loss", regime, epoch, it)
        tape_b.backward(loss)
    opt_cls.step(lr)
    opt_cls.zero_grad()


def _accuracy(model: Classifier, images: Tensor, labels: np.ndarray) -> float:
    return float(np.mean(model.predict(images) == labels))


def _epoch_eval(model, disc, held_out, cfg, epoch, wall) -> EpochRecord:
    subset = take(held_out, min(cfg.eval_limit, held_out.size))
    attack_cfg = cfg.eval_attack if cfg.eval_attack is not None else cfg.attack
    attack_cfg = replace(attack_cfg, seed=split_seed(cfg.seed, f"eval-attack/{epoch}"))
    clean_losses, adv_losses, disc_losses = [], [], []
    clean_hits = adv_hits = total = 0
    for batch in batches(subset, cfg.batch_size, seed=None):
        adv = pgd(model, batch, attack_cfg)
        clean_losses.append(loss_clean(model, batch).item() * len(batch))
        adv_losses.append(
            ops.softmax_cross_entropy(model.logits(adv.perturbed), batch.labels).item()
            * len(batch)
        )
        if disc is not None:
            disc_losses.append(
                loss_domain(model, disc, batch, adv, "discriminator").item() * len(batch)
            )
        clean_hits += int(np.sum(model.predict(batch.images) == batch.labels))
        adv_hits += int(np.sum(model.predict(adv.perturbed) == batch.labels))
        total += len(batch)
    return EpochRecord(
        epoch=epoch,
        clean_loss=sum(clean_losses) / total,
        adv_loss=sum(adv_losses) / total,
        disc_loss=(sum(disc_losses) / total) if disc_losses else 0.0,
        clean_acc=clean_hits / total,
        adv_acc=adv_hits / total,
        wall_time=wall,
    )
