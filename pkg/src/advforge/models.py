"""Network definitions: classifiers and the two-headed domain discriminator.

Parameters are plain named Tensors; forward passes are written directly in
engine ops, so the same code path serves training, attack generation and
inference.  No batch norm or dropout anywhere, hence no train/eval mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import ShapeMismatch, Tensor
from .engine import ops

ARCHITECTURES = ("lenet", "small_cnn")


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    in_shape: tuple[int, int, int] = (1, 28, 28)  # (channels, height, width)
    classes: int = 10
    widths: tuple[int, ...] = (8, 16, 32)  # small_cnn conv widths
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "in_shape": list(self.in_shape),
            "classes": self.classes,
            "widths": list(self.widths),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            arch=d["arch"],
            in_shape=tuple(d["in_shape"]),
            classes=int(d["classes"]),
            widths=tuple(d["widths"]),
            seed=int(d["seed"]),
        )


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ops.add_bias(ops.matmul(x, w), b)


class Classifier:
    """Feature extractor followed by a single fully connected head.

    ``logits(x) == head_logits(features(x))`` holds bit-exactly; the two
    stages share the same parameter tensors.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(cfg.seed)
        c, h, w = cfg.in_shape
        if cfg.arch == "lenet":
            self._build_conv(rng, "conv1", c, 6, 5)
            self._build_conv(rng, "conv2", 6, 16, 5)
            h1, w1 = h // 2, w // 2           # conv1 pads 2, then pool2
            h2, w2 = (h1 - 4) // 2, (w1 - 4) // 2
            flat = 16 * h2 * w2
            self._build_fc(rng, "fc1", flat, 120)
            self._build_fc(rng, "fc2", 120, 84)
            self._build_fc(rng, "head", 84, cfg.classes)
            self.feature_width = 84
        else:  # small_cnn: 3 conv-relu-pool blocks, then flatten
            if h % 8 or w % 8:
                raise ValueError(f"small_cnn needs input sides divisible by 8, got {cfg.in_shape}")
            chans = [c, *cfg.widths[:3]]
            for i in range(3):
                self._build_conv(rng, f"conv{i + 1}", chans[i], chans[i + 1], 3)
            self.feature_width = chans[3] * (h // 8) * (w // 8)
            self._build_fc(rng, "head", self.feature_width, cfg.classes)

    def _build_conv(self, rng, name: str, cin: int, cout: int, k: int) -> None:
        self.params[f"{name}.w"] = Tensor(
            _uniform_init(rng, (cout, cin, k, k), cin * k * k), requires_grad=True
        )
        self.params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    def _build_fc(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        self.params[f"{name}.w"] = Tensor(
            _uniform_init(rng, (fan_in, fan_out), fan_in), requires_grad=True
        )
        self.params[f"{name}.b"] = Tensor(np.zeros(fan_out, dtype=np.float32), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def features(self, x: Tensor) -> Tensor:
        """Feature vector (batch, D) feeding both the head and the discriminator."""
        p = self.params
        if x.ndim != 4 or x.shape[1:] != self.cfg.in_shape:
            raise ShapeMismatch(
                f"input shape {x.shape} does not match configured {self.cfg.in_shape}"
            )
        if self.cfg.arch == "lenet":
            x = ops.maxpool2d(ops.relu(ops.conv2d(x, p["conv1.w"], p["conv1.b"], padding=2)), 2)
            x = ops.maxpool2d(ops.relu(ops.conv2d(x, p["conv2.w"], p["conv2.b"])), 2)
            z = ops.flatten(x)
            z = ops.relu(_linear(z, p["fc1.w"], p["fc1.b"]))
            z = ops.relu(_linear(z, p["fc2.w"], p["fc2.b"]))
            return z
        for i in (1, 2, 3):
            x = ops.maxpool2d(ops.relu(ops.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"], padding=1)), 2)
        return ops.flatten(x)

    def head_logits(self, z: Tensor) -> Tensor:
        return _linear(z, self.params["head.w"], self.params["head.b"])

    def logits(self, x: Tensor) -> Tensor:
        return self.head_logits(self.features(x))

    def predict(self, x: Tensor) -> np.ndarray:
        """Argmax class per example; ties go to the lowest class index."""
        return np.argmax(self.logits(x).data, axis=1)


class Discriminator:
    """Shared 3-layer trunk with a scalar domain head and a class head.

    All hidden widths equal the feature width; either head path is 4 fully
    connected layers deep in total.
    """

    def __init__(self, feature_width: int, classes: int, seed: int = 0):
        if feature_width < 1:
            raise ValueError(f"feature width must be positive, got {feature_width}")
        if classes < 2:
            raise ValueError(f"classes must be >= 2, got {classes}")
        self.feature_width = feature_width
        self.classes = classes
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        d = feature_width
        for name in ("trunk1", "trunk2", "trunk3"):
            self.params[f"{name}.w"] = Tensor(_uniform_init(rng, (d, d), d), requires_grad=True)
            self.params[f"{name}.b"] = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)
        self.params["head_d.w"] = Tensor(_uniform_init(rng, (d, 1), d), requires_grad=True)
        self.params["head_d.b"] = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        self.params["head_c.w"] = Tensor(_uniform_init(rng, (d, classes), d), requires_grad=True)
        self.params["head_c.b"] = Tensor(np.zeros(classes, dtype=np.float32), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def trunk_params(self) -> list[Tensor]:
        return [self.params[f"trunk{i}.{s}"] for i in (1, 2, 3) for s in ("w", "b")]

    def domain_head_params(self) -> list[Tensor]:
        return [self.params["head_d.w"], self.params["head_d.b"]]

    def class_head_params(self) -> list[Tensor]:
        return [self.params["head_c.w"], self.params["head_c.b"]]

    def trunk(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.feature_width:
            raise ShapeMismatch(
                f"feature shape {z.shape} does not match discriminator width {self.feature_width}"
            )
        p = self.params
        for name in ("trunk1", "trunk2", "trunk3"):
            z = ops.relu(_linear(z, p[f"{name}.w"], p[f"{name}.b"]))
        return z

    def domain_score(self, z: Tensor) -> Tensor:
        """Raw (unsquashed) domain score, shape (batch, 1)."""
        return _linear(self.trunk(z), self.params["head_d.w"], self.params["head_d.b"])

    def class_logits(self, z: Tensor) -> Tensor:
        return _linear(self.trunk(z), self.params["head_c.w"], self.params["head_c.b"])

    def forward(self, z: Tensor) -> tuple[Tensor, Tensor]:
        """(domain score, class logits) off one shared trunk evaluation."""
        t = self.trunk(z)
        p = self.params
        return (
            _linear(t, p["head_d.w"], p["head_d.b"]),
            _linear(t, p["head_c.w"], p["head_c.b"]),
        )


def build_classifier(cfg: ModelConfig) -> Classifier:
    return Classifier(cfg)


def build_discriminator(feature_width: int, classes: int, seed: int = 0) -> Discriminator:
    return Discriminator(feature_width, classes, seed)


def extract_features(model: Classifier, batch) -> Tensor:
    """Features for an ImageBatch or a raw image Tensor."""
    x = getattr(batch, "images", batch)
    return model.features(x)
