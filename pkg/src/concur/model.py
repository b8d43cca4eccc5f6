"""Video encoder twins, projection head, and the small prediction heads.

The query tower (3-d conv stages + MLP projection) owns the trainable
parameters; the momentum tower holds same-named copies that are only ever
moved by an exponential moving average, never by gradients. A per-channel
learnable affine follows each conv in place of batch normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Stream


@dataclass(frozen=True)
class StageConfig:
    out_channels: int
    kernel: tuple = (3, 3, 3)
    stride: tuple = (1, 2, 2)


@dataclass
class ModelConfig:
    stages: tuple = (
        StageConfig(8, (3, 3, 3), (1, 2, 2)),
        StageConfig(16, (3, 3, 3), (2, 2, 2)),
        StageConfig(32, (3, 3, 3), (2, 2, 2)),
    )
    embed_dim: int = 16
    proj_hidden: int = 64
    in_channels: int = 3

    @property
    def feature_dim(self) -> int:
        return self.stages[-1].out_channels

    def validate(self):
        if not self.stages:
            raise ValueError("at least one conv stage required")
        if min(self.embed_dim, self.proj_hidden, self.in_channels) < 1:
            raise ValueError("all model dimensions must be positive")


def paper_scale_config() -> ModelConfig:
    """Full-size preset (constructible, far too slow to train in CI)."""
    return ModelConfig(
        stages=(
            StageConfig(64, (3, 7, 7), (1, 2, 2)),
            StageConfig(128, (3, 3, 3), (2, 2, 2)),
            StageConfig(256, (3, 3, 3), (2, 2, 2)),
            StageConfig(512, (3, 3, 3), (2, 2, 2)),
        ),
        embed_dim=128,
        proj_hidden=2048,
    )


def _uniform_init(rng: Stream, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    # He-gain bound: keeps activation variance roughly constant through
    # relu stages, which matters with no batch normalization anywhere.
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class VideoModel:
    """Query/momentum encoder pair with projection, distance, and class heads."""

    def __init__(self, config: ModelConfig, n_classes: int | None = None, seed: int = 0,
                 dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = Stream.from_seed(seed).child("model-init")

        self.params: dict[str, Tensor] = {}
        c_in = config.in_channels
        for i, stage in enumerate(config.stages):
            w_shape = (stage.out_channels, c_in) + tuple(stage.kernel)
            fan_in = c_in * int(np.prod(stage.kernel))
            self._add(f"encoder.stage{i}.w", _uniform_init(rng.child(f"stage{i}"), w_shape, fan_in, self.dtype))
            self._add(f"encoder.stage{i}.gamma", np.ones(stage.out_channels, dtype=self.dtype))
            self._add(f"encoder.stage{i}.beta", np.zeros(stage.out_channels, dtype=self.dtype))
            c_in = stage.out_channels

        n, h, d = config.feature_dim, config.proj_hidden, config.embed_dim
        self._add("proj.fc1.w", _uniform_init(rng.child("proj1"), (n, h), n, self.dtype))
        self._add("proj.fc1.b", np.zeros(h, dtype=self.dtype))
        self._add("proj.fc2.w", _uniform_init(rng.child("proj2"), (h, d), h, self.dtype))
        self._add("proj.fc2.b", np.zeros(d, dtype=self.dtype))

        # Momentum tower starts as an exact copy and never sees gradients.
        self.momentum_params = {
            name: Tensor(p.data.copy(), requires_grad=False) for name, p in self.params.items()
        }

        self.cs_params = {
            "cs_head.w": Tensor(_uniform_init(rng.child("cs"), (2 * d,), 2 * d, self.dtype), requires_grad=True),
            "cs_head.b": Tensor(np.zeros((), dtype=self.dtype), requires_grad=True),
        }

        self.cls_params: dict[str, Tensor] = {}
        if n_classes is not None:
            self.add_classifier(n_classes, rng.child("cls"))

    def _add(self, name: str, data: np.ndarray):
        self.params[name] = Tensor(data, requires_grad=True)

    def add_classifier(self, n_classes: int, rng: Stream | None = None):
        rng = rng or Stream.from_seed(0).child("cls")
        n = self.config.feature_dim
        self.cls_params = {
            "classifier.w": Tensor(_uniform_init(rng, (n, n_classes), n, self.dtype), requires_grad=True),
            "classifier.b": Tensor(np.zeros(n_classes, dtype=self.dtype), requires_grad=True),
        }

    # -- forward paths ------------------------------------------------------

    def _tower(self, momentum: bool) -> dict:
        return self.momentum_params if momentum else self.params

    def encode(self, clips, momentum: bool = False) -> Tensor:
        """Clip batch (N, 3, t, h, w) -> pooled features (N, feature_dim)."""
        x = clips if isinstance(clips, Tensor) else Tensor(np.asarray(clips, dtype=self.dtype))
        if x.data.ndim == 4:
            x = ad.reshape(x, (1,) + x.shape)
        if x.data.ndim != 5 or x.shape[1] != self.config.in_channels:
            raise ad.ShapeError(f"encode: expected (N, {self.config.in_channels}, t, h, w), got {x.shape}")
        # Center pixels: without any normalization layers, an all-positive
        # input gives the first conv a dominant shared gradient direction
        # that stalls SGD outright.
        x = ad.add(x, -0.5)
        p = self._tower(momentum)
        for i, stage in enumerate(self.config.stages):
            pad = tuple((k - 1) // 2 for k in stage.kernel)
            x = ad.conv3d(x, p[f"encoder.stage{i}.w"], stride=stage.stride, padding=pad)
            c = stage.out_channels
            x = ad.mul(x, ad.reshape(p[f"encoder.stage{i}.gamma"], (1, c, 1, 1, 1)))
            x = ad.add(x, ad.reshape(p[f"encoder.stage{i}.beta"], (1, c, 1, 1, 1)))
            x = ad.relu(x)
        return ad.mean(x, axis=(2, 3, 4))

    def project(self, features: Tensor, momentum: bool = False) -> Tensor:
        """Features (N, n) -> unit-norm embeddings (N, d)."""
        p = self._tower(momentum)
        x = ad.add(ad.matmul(features, p["proj.fc1.w"]), p["proj.fc1.b"])
        x = ad.relu(x)
        x = ad.add(ad.matmul(x, p["proj.fc2.w"]), p["proj.fc2.b"])
        return ad.l2_normalize(x, axis=-1)

    def embed(self, clips, momentum: bool = False) -> Tensor:
        return self.project(self.encode(clips, momentum=momentum), momentum=momentum)

    def classify(self, features: Tensor) -> Tensor:
        """Features (N, n) -> class logits (N, n_classes); no projection head."""
        if not self.cls_params:
            raise RuntimeError("no classifier head; call add_classifier first")
        return ad.add(ad.matmul(features, self.cls_params["classifier.w"]), self.cls_params["classifier.b"])

    def predict_distance(self, q: Tensor, k: Tensor) -> Tensor:
        """Scalar temporal-distance prediction from a concatenated (q, k) pair."""
        return ad.add(ad.dot(ad.concat([q, k]), self.cs_params["cs_head.w"]), self.cs_params["cs_head.b"])

    # -- parameter management -------------------------------------------------

    def momentum_update(self, m: float):
        """theta_m <- m * theta_m + (1 - m) * theta, elementwise, per name."""
        if not 0.0 <= m <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        for name, p in self.params.items():
            mp = self.momentum_params[name].data
            mp *= m
            mp += (1.0 - m) * p.data

    def trainable(self, encoder: bool = True, context_head: bool = False,
                  classifier: bool = False) -> dict:
        out: dict[str, Tensor] = {}
        if encoder:
            out.update(self.params)
        if context_head:
            out.update(self.cs_params)
        if classifier:
            out.update(self.cls_params)
        return out

    def state_arrays(self) -> dict:
        """All named arrays, for checkpointing."""
        out = {f"query.{n}": p.data for n, p in self.params.items()}
        out.update({f"momentum.{n}": p.data for n, p in self.momentum_params.items()})
        out.update({n: p.data for n, p in self.cs_params.items()})
        out.update({n: p.data for n, p in self.cls_params.items()})
        return out

    def load_state(self, arrays: dict, strict: bool = True):
        targets = {}
        targets.update({f"query.{n}": p for n, p in self.params.items()})
        targets.update({f"momentum.{n}": p for n, p in self.momentum_params.items()})
        targets.update(self.cs_params)
        targets.update(self.cls_params)
        for name, tensor in targets.items():
            if name not in arrays:
                if strict and not name.startswith("classifier."):
                    raise KeyError(f"checkpoint missing parameter {name!r}")
                continue
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(
                    f"checkpoint parameter {name!r} has shape {arr.shape}, model expects {tensor.data.shape}"
                )
            tensor.data = arr.copy()
