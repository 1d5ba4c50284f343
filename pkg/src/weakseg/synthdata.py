"""Deterministic synthetic shapes dataset.

Each scene is a low-frequency noise background with 1-3 colored shapes
drawn on top (circle, square, triangle, cross, ring; one class per shape,
distinct classes within a scene). Pixel-level masks and tight boxes are
kept as ground truth for evaluation only; training consumes just the
image-level label sets derived from them. Generation is reproducible per
(seed, index), so images can be built in any order or in parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netpbm import read_ppm, read_pgm, write_ppm, write_pgm

SHAPE_NAMES = ("circle", "square", "triangle", "cross", "ring")

# base RGB per class id 1..5; saturated and well separated so the color
# kernel of the CRF has something to hold on to
BASE_COLORS = np.array([
    (225, 60, 55),    # circle
    (70, 205, 85),    # square
    (65, 95, 225),    # triangle
    (235, 215, 60),   # cross
    (205, 70, 205),   # ring
], dtype=np.float64)


@dataclass
class SceneSpec:
    size: int = 64
    num_classes: int = 5
    min_shapes: int = 1
    max_shapes: int = 3
    color_jitter: float = 30.0
    min_shape_pixels: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.size % 8:
            raise ValueError(f"size must be divisible by 8, got {self.size}")
        if not 1 <= self.num_classes <= len(SHAPE_NAMES):
            raise ValueError(f"num_classes must be in 1..{len(SHAPE_NAMES)}")
        if not 1 <= self.min_shapes <= self.max_shapes <= self.num_classes:
            raise ValueError("need 1 <= min_shapes <= max_shapes <= num_classes")


@dataclass
class Sample:
    image: np.ndarray   # [H,W,3] uint8
    mask: np.ndarray    # [H,W] uint8, 0 = background
    labels: tuple       # sorted distinct class ids present
    boxes: tuple        # ((class_id, (x0,y0,x1,y1)), ...) half-open pixels


class SynthDataset:
    """In-memory dataset with a deterministic 80/20 train/val split by index."""

    def __init__(self, samples: list[Sample], spec: SceneSpec | None = None):
        self.samples = samples
        self.spec = spec
        n_train = (len(samples) * 8) // 10
        self.train_indices = list(range(n_train))
        self.val_indices = list(range(n_train, len(samples)))

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx) -> Sample:
        return self.samples[idx]

    def split(self, name: str):
        if name == "train":
            return self.train_indices
        if name == "val":
            return self.val_indices
        raise ValueError(f"unknown split {name!r}")


def _shape_footprint(kind: str, size: int, rng) -> np.ndarray:
    r = int(rng.integers(7, 14)) * size // 64
    r = max(r, 5)
    cy = int(rng.integers(r + 1, size - r - 1))
    cx = int(rng.integers(r + 1, size - r - 1))
    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy - cy
    dx = xx - cx
    if kind == "circle":
        return dy * dy + dx * dx <= r * r
    if kind == "square":
        s = max(2, int(round(r * 0.85)))
        return (np.abs(dy) <= s) & (np.abs(dx) <= s)
    if kind == "triangle":
        # isoceles, apex up: half-width grows linearly toward the base
        inside_rows = (dy >= -r) & (dy <= r)
        half_width = (dy + r) / 2.0
        return inside_rows & (np.abs(dx) <= half_width)
    if kind == "cross":
        t = max(2, r // 3)
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t) & (np.abs(dx) <= r))
    if kind == "ring":
        inner = max(2, int(round(r * 0.55)))
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= inner * inner)
    raise ValueError(f"unknown shape kind {kind!r}")


def _background(size: int, rng) -> np.ndarray:
    from .interp import bilinear_resize

    coarse = rng.uniform(25.0, 80.0, (3, 4, 4))
    return bilinear_resize(coarse, size, size).transpose(1, 2, 0)


def _render_scene(spec: SceneSpec, rng) -> Sample:
    while True:
        n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
        class_ids = rng.choice(np.arange(1, spec.num_classes + 1), size=n_shapes, replace=False)
        image = _background(spec.size, rng)
        mask = np.zeros((spec.size, spec.size), dtype=np.uint8)
        footprints = []
        for cid in class_ids:
            footprint = _shape_footprint(SHAPE_NAMES[cid - 1], spec.size, rng)
            color = BASE_COLORS[cid - 1] + rng.uniform(-spec.color_jitter, spec.color_jitter, 3)
            image[footprint] = np.clip(color, 0, 255)
            mask[footprint] = cid
            footprints.append((int(cid), footprint))
        # later shapes may occlude earlier ones; measure what survived
        boxes = []
        ok = True
        for cid, footprint in footprints:
            visible = footprint & (mask == cid)
            if visible.sum() < spec.min_shape_pixels:
                ok = False
                break
            ys, xs = np.nonzero(visible)
            boxes.append((cid, (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)))
        if not ok:
            continue
        labels = tuple(sorted(int(c) for c, _ in footprints))
        return Sample(image=np.clip(image, 0, 255).astype(np.uint8).copy(), mask=mask,
                      labels=labels, boxes=tuple(boxes))


def generate(spec: SceneSpec, n: int) -> SynthDataset:
    """n deterministic scenes; per-image streams derive from (seed, index)."""
    if n <= 0:
        raise ValueError("n must be positive")
    samples = [_render_scene(spec, np.random.default_rng((spec.seed, idx))) for idx in range(n)]
    return SynthDataset(samples, spec)


def dataset_mean_pixel(dataset: SynthDataset) -> np.ndarray:
    """Channel-wise mean over every pixel of the training split (0..255 scale)."""
    if not dataset.train_indices:
        raise ValueError("empty training split")
    total = np.zeros(3)
    count = 0
    for idx in dataset.train_indices:
        img = dataset[idx].image
        total += img.reshape(-1, 3).sum(axis=0)
        count += img.shape[0] * img.shape[1]
    return total / count


def write_dataset(dataset: SynthDataset, out_dir):
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for idx, sample in enumerate(dataset.samples):
        write_ppm(out / "images" / f"{idx:04d}.ppm", sample.image)
        write_pgm(out / "masks" / f"{idx:04d}.pgm", sample.mask)
    with open(out / "labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        for idx, sample in enumerate(dataset.samples):
            writer.writerow([idx, " ".join(str(c) for c in sample.labels)])
    with open(out / "boxes.csv", "w", newline="") as f:
        writer = csv.writer(f)
        for idx, sample in enumerate(dataset.samples):
            for cid, (x0, y0, x1, y1) in sample.boxes:
                writer.writerow([idx, cid, x0, y0, x1, y1])


def load_dataset(path) -> SynthDataset:
    root = Path(path)
    image_files = sorted((root / "images").glob("*.ppm"))
    if not image_files:
        raise FileNotFoundError(f"no images under {root / 'images'}")
    labels_by_idx: dict[int, tuple] = {}
    with open(root / "labels.csv", newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            labels_by_idx[int(row[0])] = tuple(int(c) for c in row[1].split()) if row[1] else ()
    boxes_by_idx: dict[int, list] = {}
    with open(root / "boxes.csv", newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            idx, cid, x0, y0, x1, y1 = (int(v) for v in row)
            boxes_by_idx.setdefault(idx, []).append((cid, (x0, y0, x1, y1)))
    samples = []
    for idx, img_path in enumerate(image_files):
        image = read_ppm(img_path)
        mask = read_pgm(root / "masks" / f"{img_path.stem}.pgm")
        samples.append(Sample(image=image, mask=mask,
                              labels=labels_by_idx.get(idx, ()),
                              boxes=tuple(boxes_by_idx.get(idx, []))))
    return SynthDataset(samples)
