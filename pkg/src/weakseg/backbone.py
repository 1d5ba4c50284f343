"""Small VGG-style trunk with two tap points plus its two heads.

Five 3x3 conv blocks; 2x max pooling after the first three, so a 64x64
input ends at an 8x8 feature map. The final block is dilated to widen the
receptive field without further downsampling. Two taps are exposed: the
mid tap at the end of block 4 and the last tap at the end of block 5; the
bias-free global-average-pooling classification head can be attached to
either one (an ablation axis), while the per-pixel segmentation head
always reads the last tap.

Every branch of the siamese setup (segmenter and the two classification
branches) is a Backbone over the *same* ParameterStore, so all weights are
genuinely shared storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensorcore import (Tensor, ParameterStore, conv2d, relu, maxpool2d,
                         global_average_pool, fully_connected, sigmoid, square,
                         sub, tsum, reshape)

GAP_TAPS = ("mid_conv", "last_conv")


@dataclass
class BackboneConfig:
    input_size: int = 64
    widths: tuple = (12, 16, 24, 32, 32)
    gap_tap: str = "last_conv"
    last_dilation: int = 2
    num_classes: int = 5

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 5:
            raise ValueError(f"expected 5 block widths, got {self.widths}")
        if self.gap_tap not in GAP_TAPS:
            raise ValueError(f"gap_tap must be one of {GAP_TAPS}, got {self.gap_tap!r}")
        if self.input_size % 8:
            raise ValueError(f"input_size must be divisible by 8, got {self.input_size}")
        if self.feature_size < 4:
            raise ValueError(f"final feature map {self.feature_size} is below the 4x4 minimum")

    @property
    def feature_size(self) -> int:
        return self.input_size // 8

    @property
    def head_width(self) -> int:
        return self.widths[3] if self.gap_tap == "mid_conv" else self.widths[4]


@dataclass
class TrunkFeatures:
    mid: Tensor
    last: Tensor


class Backbone:
    """Feature trunk + bias-free GAP class head + per-pixel scoring head."""

    def __init__(self, config: BackboneConfig, store: ParameterStore, rng=None):
        self.config = config
        self.store = store
        if "trunk.block1.weight" not in store:
            if rng is None:
                raise ValueError("a seeded rng is required to initialize parameters")
            self._init_params(rng)

    def _init_params(self, rng):
        cfg = self.config
        c_in = 3
        for i, width in enumerate(cfg.widths, start=1):
            fan_in = c_in * 9
            bound = np.sqrt(6.0 / fan_in)
            self.store.register(f"trunk.block{i}.weight",
                                Tensor(rng.uniform(-bound, bound, (width, c_in, 3, 3))))
            self.store.register(f"trunk.block{i}.bias", Tensor(np.zeros(width)))
            c_in = width
        bound = np.sqrt(6.0 / cfg.head_width)
        self.store.register("cam_head.weight",
                            Tensor(rng.uniform(-bound, bound, (cfg.num_classes, cfg.head_width))))
        # per-pixel scoring layer starts as small gaussian noise
        self.store.register("seg_head.weight",
                            Tensor(rng.normal(0.0, 0.1, (cfg.num_classes + 1, cfg.widths[4], 1, 1))))
        self.store.register("seg_head.bias", Tensor(np.zeros(cfg.num_classes + 1)))

    def _p(self, name):
        return self.store[name]

    def forward_features(self, image: Tensor) -> TrunkFeatures:
        """image [1,3,H,W] with values in [0,1] -> mid and last taps."""
        x = image
        for i in (1, 2, 3):
            x = relu(conv2d(x, self._p(f"trunk.block{i}.weight"), self._p(f"trunk.block{i}.bias"),
                            padding=1))
            x = maxpool2d(x, 2)
        mid = relu(conv2d(x, self._p("trunk.block4.weight"), self._p("trunk.block4.bias"),
                          padding=1))
        d = self.config.last_dilation
        last = relu(conv2d(mid, self._p("trunk.block5.weight"), self._p("trunk.block5.bias"),
                           padding=d, dilation=d))
        return TrunkFeatures(mid=mid, last=last)

    def _tap(self, features: TrunkFeatures) -> Tensor:
        return features.mid if self.config.gap_tap == "mid_conv" else features.last

    def class_scores(self, features: TrunkFeatures) -> Tensor:
        """Per-class score: GAP over the tapped features through the bias-free head."""
        pooled = global_average_pool(self._tap(features))
        return reshape(fully_connected(pooled, self._p("cam_head.weight")), (self.config.num_classes,))

    def class_activation_map(self, features: TrunkFeatures, class_idx: int) -> np.ndarray:
        """Weighted sum of the tapped feature maps for one class, [h,w].

        Detached from the graph: activation maps supervise the segmenter via
        an argmax, so nothing differentiates through them.
        """
        return self.class_activation_maps(features)[class_idx]

    def class_activation_maps(self, features: TrunkFeatures) -> np.ndarray:
        """All class maps at once, [C,h,w] (detached)."""
        feats = self._tap(features).data[0]
        return np.einsum("ck,khw->chw", self._p("cam_head.weight").data, feats)

    def seg_logits(self, features: TrunkFeatures) -> Tensor:
        """Per-pixel class scores from the last tap, [1,C+1,h,w]."""
        return conv2d(features.last, self._p("seg_head.weight"), self._p("seg_head.bias"))

    def cam_parameter_names(self):
        """Everything except the segmentation head (used to freeze branches)."""
        return [n for n in self.store.names() if not n.startswith("seg_head.")]


def classification_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Squared error between per-class sigmoid scores and the multi-hot tags."""
    target = Tensor(np.asarray(labels, dtype=np.float64))
    if target.data.shape != scores.data.shape:
        raise ValueError(f"labels shape {target.data.shape} != scores shape {scores.data.shape}")
    return tsum(square(sub(sigmoid(scores), target)))
