"""Supervision-mask mining: patch hiding, activation-map fusion, and the
pseudo-label construction that feeds the segmenter.

Everything here is plain numpy over detached arrays: the pseudo-mask ends
in an argmax, so no gradients ever flow through this path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .densecrf import CrfModel, CrfParams, mean_field
from .interp import bilinear_resize

PATCH_COUNT_MODES = ("random", "fixed")


@dataclass
class HidePolicy:
    grid: int = 4                       # grid x grid non-overlapping regions
    hide_prob: float = 0.5
    patch_count_mode: str = "random"    # "random": per-patch Bernoulli(hide_prob)
    fixed_count: int = 4                # "fixed": exactly this many patches
    mean_pixel: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.hide_prob <= 1.0:
            raise ValueError(f"hide_prob must be in [0,1], got {self.hide_prob}")
        if self.patch_count_mode not in PATCH_COUNT_MODES:
            raise ValueError(f"patch_count_mode must be one of {PATCH_COUNT_MODES}")
        if self.grid < 1:
            raise ValueError("grid must be >= 1")
        if not 0 <= self.fixed_count <= self.grid * self.grid:
            raise ValueError(f"fixed_count must be in [0, {self.grid * self.grid}]")


def hide_patches(image: np.ndarray, policy: HidePolicy, rng: np.random.Generator) -> np.ndarray:
    """Replace randomly selected grid regions of a [3,H,W] image by the
    dataset mean pixel. Unselected regions are returned bit-identical."""
    _, h, w = image.shape
    g = policy.grid
    if h % g or w % g:
        raise ValueError(f"image {h}x{w} not divisible by a {g}x{g} grid")
    if policy.patch_count_mode == "random":
        selected = rng.random(g * g) < policy.hide_prob
    else:
        selected = np.zeros(g * g, dtype=bool)
        selected[rng.choice(g * g, size=policy.fixed_count, replace=False)] = True
    out = image.copy()
    ph, pw = h // g, w // g
    mean = np.asarray(policy.mean_pixel, dtype=image.dtype).reshape(3, 1, 1)
    for idx in np.flatnonzero(selected):
        gy, gx = divmod(int(idx), g)
        out[:, gy * ph:(gy + 1) * ph, gx * pw:(gx + 1) * pw] = mean
    return out


def minmax_normalize(maps: np.ndarray) -> np.ndarray:
    """Scale each leading-axis channel to [0,1]; a constant channel maps to
    all zeros (the conservative no-activation reading)."""
    maps = np.asarray(maps, dtype=np.float64)
    flat = maps.reshape(maps.shape[0], -1)
    lo = flat.min(axis=1, keepdims=True)
    hi = flat.max(axis=1, keepdims=True)
    span = hi - lo
    out = np.zeros_like(flat)
    ok = span[:, 0] > 0
    out[ok] = (flat[ok] - lo[ok]) / span[ok]
    return out.reshape(maps.shape)


def merge_cam_stack(maps: list[np.ndarray]) -> np.ndarray:
    """Add the per-branch activation maps, then min-max normalize per class."""
    if not maps:
        raise ValueError("need at least one activation map stack")
    total = maps[0].astype(np.float64).copy()
    for m in maps[1:]:
        if m.shape != total.shape:
            raise ValueError(f"activation map shapes differ: {m.shape} vs {total.shape}")
        total += m
    return minmax_normalize(total)


def merge_cams(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Two-branch case of merge_cam_stack."""
    return merge_cam_stack([m1, m2])


def foreground_map(segmenter_mid: np.ndarray, cam2_mid: np.ndarray) -> np.ndarray:
    """Pixel-wise foreground probability: channel means of the two mid-level
    feature stacks, summed, min-max normalized to [0,1]."""
    if segmenter_mid.shape != cam2_mid.shape:
        raise ValueError(f"mid-feature shapes differ: {segmenter_mid.shape} vs {cam2_mid.shape}")
    fused = segmenter_mid.mean(axis=0) + cam2_mid.mean(axis=0)
    return minmax_normalize(fused[None])[0]


@dataclass
class ActivationMapSet:
    """Channel 0 is the background map (1 - foreground probability); channels
    1..C are the per-class activation maps. All values live in [0,1]."""

    maps: np.ndarray

    def __post_init__(self):
        if self.maps.ndim != 3 or self.maps.shape[0] < 2:
            raise ValueError(f"expected [C+1,h,w] with C >= 1, got {self.maps.shape}")
        if self.maps.min() < 0.0 or self.maps.max() > 1.0:
            raise ValueError("activation map values must be within [0,1]")

    @property
    def background(self) -> np.ndarray:
        return self.maps[0]

    @property
    def class_maps(self) -> np.ndarray:
        return self.maps[1:]

    @property
    def num_classes(self) -> int:
        return self.maps.shape[0] - 1


def assemble_map_set(class_maps: np.ndarray, foreground_prob: np.ndarray) -> ActivationMapSet:
    """Stack background (exactly 1 - foreground) under the class maps."""
    if class_maps.shape[1:] != foreground_prob.shape:
        raise ValueError(f"spatial shapes differ: {class_maps.shape[1:]} vs {foreground_prob.shape}")
    maps = np.concatenate([(1.0 - foreground_prob)[None], class_maps], axis=0)
    return ActivationMapSet(maps)


@dataclass
class PseudoMask:
    """Per-pixel class labels at segmenter resolution, plus the cached count
    of non-background pixels used by the loss-switching rule."""

    labels: np.ndarray
    foreground_count: int

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "PseudoMask":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels=labels, foreground_count=int(np.count_nonzero(labels)))


def build_pseudo_mask(map_set: ActivationMapSet, image: np.ndarray,
                      crf: CrfParams | None, target: tuple,
                      crf_backend: str = "reference",
                      unary_floor: float = 1e-6) -> PseudoMask:
    """Turn the activation map set into per-pixel labels at ``target`` (h,w).

    With CRF smoothing: upsample the set to image resolution, floor and
    renormalize into a per-pixel distribution, run mean-field with the image
    colors (0..255 scale), resize the marginals back down, and take the
    argmax. Without: resize the raw maps and take the argmax directly. Ties
    go to the lowest channel, so background wins over everything.
    """
    th, tw = target
    if crf is None:
        maps = bilinear_resize(map_set.maps, th, tw)
        return PseudoMask.from_labels(np.argmax(maps, axis=0))
    _, img_h, img_w = image.shape
    up = bilinear_resize(map_set.maps, img_h, img_w)
    probs = np.maximum(up, unary_floor)
    probs /= probs.sum(axis=0, keepdims=True)
    model = CrfModel(-np.log(probs), image * 255.0)
    q = mean_field(model, crf, backend=crf_backend)
    down = bilinear_resize(q, th, tw)
    return PseudoMask.from_labels(np.argmax(down, axis=0))
