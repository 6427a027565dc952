"""Attack contracts: budgets, projections, equivalences, model isolation."""

from dataclasses import replace

import numpy as np
import pytest

from advforge.attacks import ATTACKS, AttackConfig, bim, fgsm, pgd, transfer_attack
from advforge.data import ImageBatch, make_synthetic, batches
from advforge.engine import ShapeMismatch, Tensor
from advforge.models import ModelConfig, build_classifier

SLACK = 2.0**-20


@pytest.fixture
def batch(rng):
    ds = make_synthetic(16, 3, 8, seed=4)
    return next(iter(batches(ds, 16, seed=None)))


@pytest.fixture
def model():
    return build_classifier(
        ModelConfig(arch="small_cnn", in_shape=(1, 8, 8), classes=3, widths=(4, 6, 8), seed=2)
    )


def check_invariants(adv, eps):
    x = adv.originals.images.data
    p = adv.perturbed.data
    assert np.max(np.abs(p - x)) <= eps + SLACK
    assert p.min() >= 0.0 and p.max() <= 1.0


class TestFgsm:
    def test_zero_epsilon_is_identity(self, model, batch):
        adv = fgsm(model, batch, AttackConfig(epsilon=0.0))
        assert np.array_equal(adv.perturbed.data, batch.images.data)

    @pytest.mark.parametrize("eps", [0.01, 0.1, 0.3, 1.0])
    def test_invariants(self, model, batch, eps):
        check_invariants(fgsm(model, batch, AttackConfig(epsilon=eps)), eps)

    def test_moves_pixels_by_epsilon_in_interior(self, model, batch):
        eps = 0.05
        adv = fgsm(model, batch, AttackConfig(epsilon=eps))
        delta = np.abs(adv.perturbed.data - batch.images.data)
        interior = (batch.images.data > eps) & (batch.images.data < 1 - eps)
        moved = delta[interior]
        assert np.all((moved < SLACK) | (np.abs(moved - eps) < SLACK))

    def test_parameters_and_gradients_untouched(self, model, batch):
        before = [p.data.copy() for p in model.parameters()]
        model.parameters()[0].grad = np.full_like(before[0], 7.0)
        fgsm(model, batch, AttackConfig(epsilon=0.2))
        for p, b in zip(model.parameters(), before):
            assert np.array_equal(p.data, b)
        assert np.all(model.parameters()[0].grad == 7.0)
        model.parameters()[0].grad = None

    def test_predicted_label_source(self, model, batch):
        adv = fgsm(model, batch, AttackConfig(epsilon=0.1, label_source="model_predicted"))
        check_invariants(adv, 0.1)

    def test_raises_on_shape_mismatch(self, model, rng):
        bad = ImageBatch(Tensor(rng.random((4, 1, 16, 16), dtype=np.float32)), np.zeros(4, int))
        with pytest.raises(ShapeMismatch):
            fgsm(model, bad, AttackConfig(epsilon=0.1))


class TestIterative:
    def test_bim_equals_fgsm_single_full_step(self, model, batch):
        eps = 0.07
        a = fgsm(model, batch, AttackConfig(epsilon=eps))
        b = bim(model, batch, AttackConfig(epsilon=eps, step=eps, iterations=1))
        assert np.array_equal(a.perturbed.data, b.perturbed.data)

    def test_pgd_no_random_start_equals_bim(self, model, batch):
        cfg = AttackConfig(epsilon=0.2, step=0.03, iterations=6, random_start=False)
        a = bim(model, batch, cfg)
        b = pgd(model, batch, cfg)
        assert np.array_equal(a.perturbed.data, b.perturbed.data)

    def test_fgsm_equals_pgd_k1_no_start(self, model, batch):
        eps = 0.12
        a = fgsm(model, batch, AttackConfig(epsilon=eps))
        b = pgd(model, batch, AttackConfig(epsilon=eps, step=eps, iterations=1))
        assert np.array_equal(a.perturbed.data, b.perturbed.data)

    @pytest.mark.parametrize("k", [1, 3, 8])
    def test_invariants_each_iteration_count(self, model, batch, k):
        cfg = AttackConfig(epsilon=0.15, step=0.05, iterations=k, random_start=True, seed=3)
        check_invariants(pgd(model, batch, cfg), 0.15)

    def test_pgd_deterministic_per_seed(self, model, batch):
        cfg = AttackConfig(epsilon=0.2, step=0.04, iterations=4, random_start=True, seed=9)
        a = pgd(model, batch, cfg)
        b = pgd(model, batch, cfg)
        assert np.array_equal(a.perturbed.data, b.perturbed.data)
        c = pgd(model, batch, replace(cfg, seed=10))
        assert not np.array_equal(a.perturbed.data, c.perturbed.data)

    def test_projection_active_every_iteration(self, model, batch):
        # huge step: a single unprojected iteration would leave the ball
        cfg = AttackConfig(epsilon=0.1, step=0.9, iterations=3)
        check_invariants(bim(model, batch, cfg), 0.1)

    def test_iterative_needs_positive_step(self, model, batch):
        with pytest.raises(ValueError, match="positive step"):
            bim(model, batch, AttackConfig(epsilon=0.1, step=0.0, iterations=1))


class TestMonotoneBudget:
    def test_mean_loss_nondecreasing_in_epsilon(self, rng):
        """On a trained vanilla model, larger FGSM budgets should not reduce
        the attacked loss on the synthetic set (batch-level, small tolerance)."""
        from advforge.engine import ops
        from advforge.training import TrainConfig, train

        ds = make_synthetic(256, 4, 16, seed=8)
        model = build_classifier(
            ModelConfig(arch="small_cnn", in_shape=(1, 16, 16), classes=4, widths=(4, 8, 8), seed=5)
        )
        cfg = TrainConfig(regime="vanilla", epochs=3, batch_size=64, lr=1e-3,
                          attack=AttackConfig(epsilon=0.1, step=0.05, iterations=2), seed=0,
                          eval_limit=64)
        model, _ = train(model, None, ds, cfg)
        batch = next(iter(batches(ds, 256, seed=None)))
        losses = []
        for eps in (0.0, 0.05, 0.1, 0.2, 0.4):
            adv = fgsm(model, batch, AttackConfig(epsilon=eps))
            logits = model.logits(adv.perturbed)
            losses.append(ops.softmax_cross_entropy(logits, batch.labels).item())
        for lo, hi in zip(losses, losses[1:]):
            assert hi >= lo - 1e-4, losses


class TestConfigValidation:
    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            AttackConfig(epsilon=-0.1)
        with pytest.raises(ValueError):
            AttackConfig(epsilon=1.5)

    def test_step_required_for_iterations(self):
        with pytest.raises(ValueError):
            AttackConfig(epsilon=0.1, step=0.0, iterations=5)

    def test_label_source_checked(self):
        with pytest.raises(ValueError):
            AttackConfig(epsilon=0.1, label_source="oracle")


class TestTransfer:
    def test_same_model_equals_whitebox(self, model, batch):
        cfg = AttackConfig(epsilon=0.1, step=0.05, iterations=3, random_start=True, seed=1)
        a = transfer_attack(model, model, batch, "pgd", cfg)
        b = pgd(model, batch, cfg)
        assert np.array_equal(a.perturbed.data, b.perturbed.data)

    def test_target_never_queried(self, model, batch):
        cfg = ModelConfig(arch="small_cnn", in_shape=(1, 8, 8), classes=3, widths=(4, 6, 8), seed=77)
        target = build_classifier(cfg)
        calls = []
        target.features = lambda *a, **k: calls.append(1)  # any query would record
        transfer_attack(model, target, batch, "pgd",
                        AttackConfig(epsilon=0.1, step=0.05, iterations=2))
        assert calls == []

    def test_shape_mismatch_rejected(self, model, batch):
        other = build_classifier(
            ModelConfig(arch="small_cnn", in_shape=(1, 16, 16), classes=3, widths=(4, 6, 8))
        )
        with pytest.raises(ShapeMismatch):
            transfer_attack(model, other, batch, "pgd", AttackConfig(epsilon=0.1, step=0.05))

    def test_unknown_attack_name(self, model, batch):
        with pytest.raises(ValueError, match="unknown attack"):
            transfer_attack(model, model, batch, "deepfool", AttackConfig(epsilon=0.1))
