"""Compact convolutional feature extractor shared by the deep fidelity
measures. Three 3x3 stages with stride-2 downsampling and rectifier
activations; weights live in the shared named-tensor container.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .weights import require


@dataclass
class Stage:
    kernel: np.ndarray  # k x k x cin x cout
    bias: np.ndarray  # (cout,)
    stride: int = 2


@dataclass
class FeatureExtractor:
    stages: list[Stage]
    stage_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.stage_weights is None:
            self.stage_weights = np.full(len(self.stages), 1.0 / len(self.stages))

    @property
    def input_channels(self) -> int:
        return self.stages[0].kernel.shape[2]

    def forward(self, x: ad.Tensor) -> list[ad.Tensor]:
        """Per-stage rectified feature maps, shallowest first."""
        feats = []
        t = x
        for st in self.stages:
            t = ad.relu(ad.conv2d(t, st.kernel, stride=st.stride, padding="same") + st.bias)
            feats.append(t)
        return feats

    def to_weights(self, prefix: str = "extractor") -> dict[str, np.ndarray]:
        out = {f"{prefix}.stage_weights": self.stage_weights}
        for i, st in enumerate(self.stages):
            out[f"{prefix}.k{i}"] = st.kernel
            out[f"{prefix}.b{i}"] = st.bias
            out[f"{prefix}.s{i}"] = np.array([st.stride], dtype=np.float64)
        return out

    @classmethod
    def from_weights(cls, tensors: dict[str, np.ndarray], prefix: str = "extractor"):
        stages = []
        i = 0
        while f"{prefix}.k{i}" in tensors:
            stages.append(
                Stage(
                    kernel=require(tensors, f"{prefix}.k{i}"),
                    bias=require(tensors, f"{prefix}.b{i}"),
                    stride=int(require(tensors, f"{prefix}.s{i}")[0]),
                )
            )
            i += 1
        if not stages:
            require(tensors, f"{prefix}.k0")  # raises with the tensor name
        return cls(stages=stages, stage_weights=require(tensors, f"{prefix}.stage_weights"))

    @classmethod
    def default(cls, seed: int = 11, channels=(3, 8, 16, 32)):
        """Seeded random extractor with zero biases (keeps each stage
        positively homogeneous, so unit-normalized features are scale-free)."""
        rng = np.random.default_rng(seed)
        stages = []
        for cin, cout in zip(channels[:-1], channels[1:]):
            k = rng.normal(0, 1.0 / np.sqrt(9 * cin), (3, 3, cin, cout))
            stages.append(Stage(kernel=k, bias=np.zeros(cout), stride=2))
        return cls(stages=stages)

    @classmethod
    def identity(cls, channels: int = 3, stride: int = 1):
        """Single 1x1 identity stage; features equal the (positive) input."""
        k = np.zeros((1, 1, channels, channels))
        for c in range(channels):
            k[0, 0, c, c] = 1.0
        return cls(stages=[Stage(kernel=k, bias=np.zeros(channels), stride=stride)])
