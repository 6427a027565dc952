"""Model construction, composition identities, discriminator trunk sharing."""

import numpy as np
import pytest

from advforge.engine import ShapeMismatch, Tensor, record
from advforge.engine import ops
from advforge.models import (
    Discriminator,
    ModelConfig,
    build_classifier,
    build_discriminator,
    extract_features,
)


class TestBuildClassifier:
    def test_lenet_shapes(self, rng):
        model = build_classifier(ModelConfig(arch="lenet", in_shape=(1, 28, 28), classes=10))
        x = Tensor(rng.random((64, 1, 28, 28), dtype=np.float32))
        assert model.logits(x).shape == (64, 10)
        assert model.feature_width == 84

    def test_small_cnn_shapes(self, rng):
        cfg = ModelConfig(arch="small_cnn", in_shape=(3, 16, 16), classes=5, widths=(4, 8, 12))
        model = build_classifier(cfg)
        x = Tensor(rng.random((7, 3, 16, 16), dtype=np.float32))
        assert model.logits(x).shape == (7, 5)
        assert model.feature_width == 12 * 2 * 2

    def test_same_seed_identical_parameters(self):
        cfg = ModelConfig(arch="lenet", seed=42)
        a, b = build_classifier(cfg), build_classifier(cfg)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_different_seed_differs(self):
        a = build_classifier(ModelConfig(arch="lenet", seed=1))
        b = build_classifier(ModelConfig(arch="lenet", seed=2))
        assert any(
            not np.array_equal(pa.data, pb.data)
            for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters())
        )

    def test_unknown_architecture(self):
        with pytest.raises(ValueError, match="unknown architecture"):
            ModelConfig(arch="resnet18")

    def test_init_scheme(self):
        model = build_classifier(ModelConfig(arch="lenet", seed=3))
        w = model.params["conv1.w"].data
        bound = np.sqrt(6.0 / 25)  # fan_in = 1*5*5
        assert np.abs(w).max() <= bound
        assert np.all(model.params["conv1.b"].data == 0)
        assert np.all(model.params["fc1.b"].data == 0)

    def test_composition_identity(self, lenet, rng):
        x = Tensor(rng.random((5, 1, 28, 28), dtype=np.float32))
        via_head = lenet.head_logits(lenet.features(x))
        direct = lenet.logits(x)
        assert np.array_equal(via_head.data, direct.data)

    def test_zero_input_features_finite(self, lenet):
        z = lenet.features(Tensor(np.zeros((2, 1, 28, 28), dtype=np.float32)))
        assert np.all(np.isfinite(z.data))

    def test_extract_features_accepts_batch_or_tensor(self, lenet, rng):
        from advforge.data import ImageBatch

        x = rng.random((3, 1, 28, 28), dtype=np.float32)
        batch = ImageBatch(Tensor(x), np.array([0, 1, 2]))
        a = extract_features(lenet, batch)
        b = extract_features(lenet, Tensor(x))
        assert a.shape == (3, 84)
        assert np.array_equal(a.data, b.data)

    def test_input_shape_mismatch(self, lenet, rng):
        with pytest.raises(ShapeMismatch):
            lenet.features(Tensor(rng.random((2, 1, 16, 16), dtype=np.float32)))


class TestDiscriminator:
    def test_head_shapes(self, rng):
        disc = build_discriminator(256, 10, seed=0)
        z = Tensor(rng.standard_normal((17, 256)).astype(np.float32))
        assert disc.domain_score(z).shape == (17, 1)
        assert disc.class_logits(z).shape == (17, 10)

    def test_deterministic_on_copies(self, rng):
        disc = build_discriminator(32, 4, seed=0)
        z = rng.standard_normal((5, 32)).astype(np.float32)
        d1, c1 = disc.forward(Tensor(z))
        d2, c2 = disc.forward(Tensor(z.copy()))
        assert np.array_equal(d1.data, d2.data)
        assert np.array_equal(c1.data, c2.data)

    def test_parameter_count(self):
        d_width, classes = 84, 10
        disc = build_discriminator(d_width, classes, seed=0)
        count = sum(p.data.size for p in disc.parameters())
        expected = 3 * (d_width**2 + d_width) + (d_width + 1) + (classes * d_width + classes)
        assert count == expected

    def test_fused_forward_matches_separate_calls(self, rng):
        disc = build_discriminator(24, 3, seed=2)
        z = Tensor(rng.standard_normal((6, 24)).astype(np.float32))
        d, c = disc.forward(z)
        assert np.array_equal(d.data, disc.domain_score(z).data)
        assert np.array_equal(c.data, disc.class_logits(z).data)

    def test_trunk_shared_heads_independent(self, rng):
        """Perturbing a trunk weight moves both heads; perturbing the domain
        head leaves the class head untouched."""
        disc = build_discriminator(16, 3, seed=1)
        z = Tensor(rng.standard_normal((4, 16)).astype(np.float32))
        d0, c0 = (t.data.copy() for t in disc.forward(z))

        disc.params["trunk2.w"].data[0, 0] += 0.5
        d1, c1 = disc.forward(z)
        assert not np.array_equal(d1.data, d0)
        assert not np.array_equal(c1.data, c0)
        disc.params["trunk2.w"].data[0, 0] -= 0.5

        disc.params["head_d.w"].data[0, 0] += 0.5
        d2, c2 = disc.forward(z)
        assert not np.array_equal(d2.data, d0)
        assert np.array_equal(c2.data, c0)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            build_discriminator(0, 10)
        with pytest.raises(ValueError):
            build_discriminator(16, 1)

    def test_width_mismatch(self, rng):
        disc = build_discriminator(16, 3)
        with pytest.raises(ShapeMismatch, match="width"):
            disc.domain_score(Tensor(rng.standard_normal((4, 12)).astype(np.float32)))


class TestBatchInvariance:
    def test_forward_preserves_batch_and_classes(self, rng):
        for arch, shape in (("lenet", (1, 28, 28)), ("small_cnn", (1, 16, 16))):
            cfg = ModelConfig(arch=arch, in_shape=shape, classes=7)
            model = build_classifier(cfg)
            for n in (1, 3, 64):
                x = Tensor(rng.random((n, *shape), dtype=np.float32))
                assert model.logits(x).shape == (n, 7)
