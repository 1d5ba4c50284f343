"""Segmentation losses and the loss-switching scheduler.

Two segmentation losses exist: a tag-only loss that pushes the spatial max
probability of present classes up and of absent classes down, and a
per-pixel cross-entropy against pseudo-mask labels. The scheduler decides
per iteration which one trains the segmenter: always the cross-entropy
("none"), tag-only during a warm-up window ("fixed"), or additionally
tag-only whenever the current pseudo-mask has too few foreground pixels to
be trusted ("adaptive").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor, softmax
from .hideseek import PseudoMask

LOG_CLAMP = 1e-12
SWITCH_MODES = ("none", "fixed", "adaptive")


@dataclass(frozen=True)
class LabelSets:
    """Class indices present / absent in an image; background is always
    present, so the two sets partition {0..C}."""

    present: frozenset
    absent: frozenset

    def __post_init__(self):
        if 0 not in self.present:
            raise ValueError("background (class 0) must be in the present set")
        if self.present & self.absent:
            raise ValueError("present and absent sets overlap")

    @classmethod
    def from_image_labels(cls, class_ids, num_classes: int) -> "LabelSets":
        present = frozenset({0} | {int(c) for c in class_ids})
        universe = set(range(num_classes + 1))
        if not present <= universe:
            raise ValueError(f"class ids {sorted(present)} outside 0..{num_classes}")
        return cls(present=present, absent=frozenset(universe - present))


@dataclass
class SwitchPolicy:
    mode: str = "adaptive"
    warmup_iters: int = 500
    noisy_threshold: int = 0

    def __post_init__(self):
        if self.mode not in SWITCH_MODES:
            raise ValueError(f"mode must be one of {SWITCH_MODES}, got {self.mode!r}")
        if self.noisy_threshold < 0:
            raise ValueError("noisy_threshold must be >= 0")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be >= 0")


def softmax_scores(seg_logits: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis of [C+1,h,w] logits."""
    if seg_logits.data.ndim != 3:
        raise ValueError(f"expected [C+1,h,w] logits, got {seg_logits.shape}")
    return softmax(seg_logits, axis=0)


def weak_loss(probs: Tensor, sets: LabelSets) -> Tensor:
    """Tag-only loss over the spatial max probability per class.

    Present classes contribute -log(max S_c), absent ones -log(1 - max S_c),
    each side averaged over its set; an empty side is dropped. Logs are
    clamped at 1e-12 and the max subgradient routes to the first pixel in
    scan order attaining the max.
    """
    s = probs.data
    channels, h, w = s.shape
    flat = s.reshape(channels, -1)
    arg = flat.argmax(axis=1)
    peak = flat[np.arange(channels), arg]
    present = sorted(sets.present)
    absent = sorted(sets.absent)
    loss = 0.0
    for c in present:
        loss -= np.log(max(peak[c], LOG_CLAMP)) / len(present)
    for c in absent:
        loss -= np.log(max(1.0 - peak[c], LOG_CLAMP)) / len(absent)
    out = Tensor(np.float64(loss), (probs,))

    def _bw():
        g = np.zeros_like(flat)
        upstream = float(out.grad)
        for c in present:
            if peak[c] > LOG_CLAMP:
                g[c, arg[c]] -= upstream / (len(present) * peak[c])
        for c in absent:
            if 1.0 - peak[c] > LOG_CLAMP:
                g[c, arg[c]] += upstream / (len(absent) * (1.0 - peak[c]))
        probs.accumulate_grad(g.reshape(channels, h, w))

    out._backward = _bw
    return out


def smx_loss(probs: Tensor, mask: PseudoMask) -> Tensor:
    """Mean per-pixel cross-entropy against the pseudo-mask labels."""
    s = probs.data
    channels, h, w = s.shape
    if mask.labels.shape != (h, w):
        raise ValueError(f"pseudo-mask {mask.labels.shape} does not match probs {(h, w)}")
    flat = s.reshape(channels, -1)
    labels = mask.labels.reshape(-1)
    n = labels.size
    picked = flat[labels, np.arange(n)]
    clamped = np.maximum(picked, LOG_CLAMP)
    out = Tensor(np.float64(-np.log(clamped).sum() / n), (probs,))

    def _bw():
        g = np.zeros_like(flat)
        live = picked > LOG_CLAMP
        rows = labels[live]
        cols = np.arange(n)[live]
        g[rows, cols] = -float(out.grad) / (n * picked[live])
        probs.accumulate_grad(g.reshape(channels, h, w))

    out._backward = _bw
    return out


def select_loss(policy: SwitchPolicy, iteration: int, mask: PseudoMask) -> str:
    """Pure scheduling rule: returns "weak" or "smx"."""
    if policy.mode == "none":
        return "smx"
    if iteration < policy.warmup_iters:
        return "weak"
    if policy.mode == "adaptive" and mask.foreground_count <= policy.noisy_threshold:
        return "weak"
    return "smx"


def total_loss(seg_loss: Tensor, cls1: Tensor | None, cls2: Tensor | None,
               weights=(1.0, 1.0, 1.0)) -> Tensor:
    """Weighted sum of the segmentation loss and the branch classification
    losses; a missing branch contributes nothing."""
    out = seg_loss * float(weights[0])
    if cls1 is not None:
        out = out + cls1 * float(weights[1])
    if cls2 is not None:
        out = out + cls2 * float(weights[2])
    return out
