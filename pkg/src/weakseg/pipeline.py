"""Training and inference orchestration.

A training step runs the clean image through the shared trunk (the
segmenter and the first classification branch read the same features), the
hidden image through the second branch, fuses the branch activation maps
into a pseudo-mask (optionally CRF-smoothed), picks the segmentation loss
via the switching rule, and applies one SGD update. Inference adds the
class filter: per-class sigmoid scores from the classification head gate
and weight the segmenter's softmax channels.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig, classification_loss
from .densecrf import CrfModel, CrfParams, mean_field
from .evalkit import ConfusionMatrix, Detection, extract_boxes, nms, average_precision
from .hideseek import (HidePolicy, hide_patches, merge_cam_stack, foreground_map,
                       assemble_map_set, build_pseudo_mask, minmax_normalize)
from .interp import bilinear_resize
from .losses import (LabelSets, SwitchPolicy, softmax_scores, weak_loss, smx_loss,
                     select_loss, total_loss)
from .netpbm import write_pgm
from .synthdata import SynthDataset, dataset_mean_pixel
from .tensorcore import (Tensor, ParameterStore, SgdOptimizer, backward, reshape,
                         save_checkpoint, load_checkpoint)

LOSS_CSV_COLUMNS = ("iteration", "seg_loss", "cls1", "cls2", "chosen_loss",
                    "foreground_count", "lr")
CAM_PRETRAIN_FRACTION = 0.4  # classification-only warm-up of the frozen variant


class NumericFailure(Exception):
    """A loss went non-finite; carries the offending values for the dump."""

    def __init__(self, message, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    iterations: int = 8000
    base_lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    hide: HidePolicy = field(default_factory=HidePolicy)
    crf: CrfParams = field(default_factory=CrfParams)
    switch: SwitchPolicy = field(default_factory=SwitchPolicy)
    crf_in_training: bool = True
    crf_every_k: int = 1
    crf_backend: str = "fast"
    num_cam_branches: int = 2
    freeze_cams: bool = False
    loss_weights: tuple = (1.0, 1.0, 1.0)
    filter_threshold: float = 0.5
    augment: bool = False
    checkpoint_every: int = 0   # 0: final checkpoint only
    snapshot_every: int = 0     # 0: no pseudo-mask snapshots

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.num_cam_branches < 1:
            raise ValueError("need at least one classification branch")
        if self.crf_every_k < 1:
            raise ValueError("crf_every_k must be >= 1")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)


@dataclass
class RunArtifacts:
    out_dir: Path
    checkpoint_path: Path
    loss_csv: Path
    snapshot_dir: Path


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Piecewise-constant schedule: base for the first half, base/10 after."""
    return config.base_lr if iteration < config.iterations // 2 else config.base_lr / 10.0


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    data["backbone"] = BackboneConfig(**data["backbone"])
    data["hide"] = HidePolicy(**data["hide"])
    data["crf"] = CrfParams(**data["crf"])
    data["switch"] = SwitchPolicy(**data["switch"])
    return TrainConfig(**data)


class TrainState:
    """Everything mutable across iterations; one backbone view per branch,
    all over the same parameter store."""

    def __init__(self, config: TrainConfig, mean_pixel01: np.ndarray):
        self.config = config
        seq = np.random.SeedSequence(config.seed)
        init_seed, hide_seed, aug_seed = seq.spawn(3)
        self.store = ParameterStore()
        self.segmenter = Backbone(config.backbone, self.store, np.random.default_rng(init_seed))
        self.cam_branches = [Backbone(config.backbone, self.store)
                             for _ in range(config.num_cam_branches)]
        self.optimizer = SgdOptimizer(self.store, config.momentum, config.weight_decay)
        self.hide_rng = np.random.default_rng(hide_seed)
        self.augment_rng = np.random.default_rng(aug_seed)
        self.hide_policy = dataclasses.replace(config.hide, mean_pixel=tuple(mean_pixel01))


def _augment(image: np.ndarray, rng) -> np.ndarray:
    """Optional horizontal flip plus a small reflected-pad random shift."""
    out = image
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    pad = 4
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    h, w = out.shape[1:]
    padded = np.pad(out, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    return padded[:, dy:dy + h, dx:dx + w].copy()


def _pretraining(config: TrainConfig, iteration: int) -> bool:
    return config.freeze_cams and iteration < int(CAM_PRETRAIN_FRACTION * config.iterations)


def train_step(sample, state: TrainState, iteration: int) -> dict:
    cfg = state.config
    num_classes = cfg.backbone.num_classes
    image = sample.image.transpose(2, 0, 1).astype(np.float64) / 255.0
    if cfg.augment:
        image = _augment(image, state.augment_rng)
    multihot = np.zeros(num_classes)
    for cid in sample.labels:
        multihot[cid - 1] = 1.0

    clean_feats = state.segmenter.forward_features(Tensor(image[None]))
    cam1 = state.cam_branches[0]
    cls_losses = [classification_loss(cam1.class_scores(clean_feats), multihot)]
    cam_stacks = [cam1.class_activation_maps(clean_feats)]
    hidden_feats = None
    for branch in state.cam_branches[1:]:
        hidden = hide_patches(image, state.hide_policy, state.hide_rng)
        feats = branch.forward_features(Tensor(hidden[None]))
        cls_losses.append(classification_loss(branch.class_scores(feats), multihot))
        cam_stacks.append(branch.class_activation_maps(feats))
        if hidden_feats is None:
            hidden_feats = feats

    merged = merge_cam_stack(cam_stacks)
    # supervision is mined per image-level tag: classes absent from the tags
    # contribute nothing to the pseudo-mask
    absent = [c for c in range(1, num_classes + 1) if c not in sample.labels]
    for c in absent:
        merged[c - 1] = 0.0
    seek_mid = (hidden_feats if hidden_feats is not None else clean_feats).mid.data[0]
    fg = foreground_map(clean_feats.mid.data[0], seek_mid)
    map_set = assemble_map_set(merged, fg)
    crf = cfg.crf if (cfg.crf_in_training and iteration % cfg.crf_every_k == 0) else None
    size = cfg.backbone.feature_size
    mask = build_pseudo_mask(map_set, image, crf, (size, size), crf_backend=cfg.crf_backend)

    logits = reshape(state.segmenter.seg_logits(clean_feats),
                     (num_classes + 1, size, size))
    probs = softmax_scores(logits)
    chosen = select_loss(cfg.switch, iteration, mask)
    sets = LabelSets.from_image_labels(sample.labels, num_classes)
    seg_loss = weak_loss(probs, sets) if chosen == "weak" else smx_loss(probs, mask)

    cls1 = cls_losses[0]
    cls2 = cls_losses[1] if len(cls_losses) > 1 else None
    if _pretraining(cfg, iteration):
        total = total_loss(Tensor(np.float64(0.0)), cls1, cls2, cfg.loss_weights)
    elif cfg.freeze_cams:
        total = seg_loss * cfg.loss_weights[0]
    else:
        total = total_loss(seg_loss, cls1, cls2, cfg.loss_weights)

    values = {"seg_loss": float(seg_loss.data), "cls1": float(cls1.data),
              "cls2": float(cls2.data) if cls2 is not None else 0.0,
              "total": float(total.data)}
    if not np.isfinite(values["total"]):
        raise NumericFailure(
            f"non-finite loss at iteration {iteration}: {values}",
            dump={"seg_logits": logits.data.copy(), "seg_probs": probs.data.copy(),
                  "merged_cams": merged, "foreground": fg})

    state.store.zero_grad()
    backward(total)
    if cfg.freeze_cams and not _pretraining(cfg, iteration):
        for name in state.segmenter.cam_parameter_names():
            state.store[name].grad = None
    lr = lr_at(cfg, iteration)
    state.optimizer.step(lr)
    return {"iteration": iteration, "seg_loss": values["seg_loss"], "cls1": values["cls1"],
            "cls2": values["cls2"], "chosen_loss": chosen,
            "foreground_count": mask.foreground_count, "lr": lr, "pseudo_mask": mask}


def train(config: TrainConfig, dataset: SynthDataset, out_dir) -> RunArtifacts:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot_dir = out / "pseudo_masks"
    mean01 = dataset_mean_pixel(dataset) / 255.0
    state = TrainState(config, mean01)
    train_idx = dataset.train_indices
    loss_csv = out / "loss_log.csv"
    checkpoint_path = out / "checkpoint.bin"
    with open(loss_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_CSV_COLUMNS)
        for it in range(config.iterations):
            sample = dataset[train_idx[it % len(train_idx)]]
            try:
                diag = train_step(sample, state, it)
            except NumericFailure as failure:
                save_checkpoint(out / "diagnostic_dump.bin", failure.dump,
                                {"iteration": it, "error": str(failure)})
                raise
            writer.writerow([diag["iteration"], f"{diag['seg_loss']:.10g}",
                             f"{diag['cls1']:.10g}", f"{diag['cls2']:.10g}",
                             diag["chosen_loss"], diag["foreground_count"],
                             f"{diag['lr']:.10g}"])
            if config.snapshot_every and it % config.snapshot_every == 0:
                snapshot_dir.mkdir(exist_ok=True)
                write_pgm(snapshot_dir / f"iter{it:06d}.pgm",
                          diag["pseudo_mask"].labels.astype(np.uint8))
            if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                _save(state, checkpoint_path, it + 1)
    _save(state, checkpoint_path, config.iterations)
    return RunArtifacts(out_dir=out, checkpoint_path=checkpoint_path,
                        loss_csv=loss_csv, snapshot_dir=snapshot_dir)


def _save(state: TrainState, path, iteration: int):
    save_checkpoint(path, state.store.state_arrays(),
                    {"config": config_to_dict(state.config), "iteration": iteration})


def load_model(checkpoint_path) -> tuple[Backbone, TrainConfig]:
    arrays, meta = load_checkpoint(checkpoint_path)
    config = config_from_dict(meta["config"])
    store = ParameterStore()
    model = Backbone(config.backbone, store, np.random.default_rng(0))
    store.load_state_arrays(arrays)
    return model, config


def infer(image_u8: np.ndarray, model: Backbone, apply_filter: bool = True,
          apply_crf: bool = True, crf_params: CrfParams | None = None,
          crf_backend: str = "fast", filter_threshold: float = 0.5) -> np.ndarray:
    """Final label mask at image resolution for a [H,W,3] uint8 image."""
    h, w = image_u8.shape[:2]
    image = image_u8.transpose(2, 0, 1).astype(np.float64) / 255.0
    feats = model.forward_features(Tensor(image[None]))
    num_classes = model.config.num_classes
    size = model.config.feature_size
    logits = model.seg_logits(feats).data.reshape(num_classes + 1, size, size)
    shifted = logits - logits.max(axis=0, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=0, keepdims=True)

    suppressed = np.zeros(num_classes + 1, dtype=bool)
    if apply_filter:
        # the classification head re-read over the segmenter's own features
        scores = model.class_scores(feats).data
        gates = 1.0 / (1.0 + np.exp(-scores))
        for c in range(num_classes):
            if gates[c] < filter_threshold:
                suppressed[c + 1] = True
                probs[c + 1] = 0.0
            else:
                probs[c + 1] *= gates[c]

    up = bilinear_resize(probs, h, w)
    if apply_crf:
        floored = np.maximum(up, 1e-6)
        floored /= floored.sum(axis=0, keepdims=True)
        model_crf = CrfModel(-np.log(floored), image * 255.0)
        up = mean_field(model_crf, crf_params or CrfParams(), backend=crf_backend)
    if apply_filter:
        up[suppressed] = -np.inf  # a filtered class never appears in the output
    return np.argmax(up, axis=0)


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    pixel_accuracy: float
    mean_iou: float
    per_class_iou: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["class", "iou"])
            for c, iou in enumerate(self.per_class_iou):
                writer.writerow([c, "" if np.isnan(iou) else f"{iou:.6f}"])
            writer.writerow(["pca", f"{self.pixel_accuracy:.6f}"])
            writer.writerow(["miou", f"{self.mean_iou:.6f}"])


def evaluate(model: Backbone, dataset: SynthDataset, split: str = "val",
             apply_filter: bool = True, apply_crf: bool = False,
             crf_params: CrfParams | None = None, crf_backend: str = "fast",
             filter_threshold: float = 0.5) -> EvalReport:
    cm = ConfusionMatrix(model.config.num_classes + 1)
    for idx in dataset.split(split):
        sample = dataset[idx]
        pred = infer(sample.image, model, apply_filter=apply_filter, apply_crf=apply_crf,
                     crf_params=crf_params, crf_backend=crf_backend,
                     filter_threshold=filter_threshold)
        cm.add(sample.mask.astype(np.int64), pred)
    return EvalReport(confusion=cm, pixel_accuracy=cm.pixel_accuracy(),
                      mean_iou=cm.mean_iou(), per_class_iou=cm.per_class_iou())


def all_background_report(dataset: SynthDataset, num_classes: int, split: str = "val") -> EvalReport:
    """The trivial constant-background predictor, as a baseline."""
    cm = ConfusionMatrix(num_classes + 1)
    for idx in dataset.split(split):
        mask = dataset[idx].mask
        cm.add(mask.astype(np.int64), np.zeros_like(mask, dtype=np.int64))
    return EvalReport(confusion=cm, pixel_accuracy=cm.pixel_accuracy(),
                      mean_iou=cm.mean_iou(), per_class_iou=cm.per_class_iou())


def wsol_report(model: Backbone, dataset: SynthDataset, split: str = "val",
                threshold: float = 0.6, tious: tuple = (0.5, 0.2),
                nms_iou: float = 0.3) -> dict:
    """Per-class average precision of boxes mined from the activation maps.

    Maps come from the clean-image classification branch, min-max normalized
    per class, binarized, and grouped into connected components; each box is
    scored by the activation mass of its component.
    """
    num_classes = model.config.num_classes
    detections: dict[int, list] = {c: [] for c in range(1, num_classes + 1)}
    gt: dict[int, dict] = {c: {} for c in range(1, num_classes + 1)}
    for idx in dataset.split(split):
        sample = dataset[idx]
        image = sample.image.transpose(2, 0, 1).astype(np.float64) / 255.0
        feats = model.forward_features(Tensor(image[None]))
        cams = minmax_normalize(model.class_activation_maps(feats))
        for c in range(1, num_classes + 1):
            boxes = [b for cid, b in sample.boxes if cid == c]
            if boxes:
                gt[c][idx] = boxes
            dets = extract_boxes(cams[c - 1], sample.image.shape[:2], threshold=threshold)
            kept = nms(dets, iou_threshold=nms_iou)
            detections[c].extend(Detection(box=d.box, score=d.score, class_id=c, image_id=idx)
                                 for d in kept)
    report: dict = {}
    for tiou in tious:
        per_class = {}
        for c in range(1, num_classes + 1):
            if not gt[c]:
                continue
            per_class[c] = average_precision(detections[c], gt[c], tiou)
        report[tiou] = {"per_class": per_class,
                        "mean": float(np.mean(list(per_class.values()))) if per_class else 0.0}
    return report


def write_wsol_csv(report: dict, path):
    tious = sorted(report, reverse=True)
    classes = sorted({c for t in tious for c in report[t]["per_class"]})
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class"] + [f"ap_tiou_{t}" for t in tious])
        for c in classes:
            writer.writerow([c] + [f"{report[t]['per_class'].get(c, float('nan')):.6f}" for t in tious])
        writer.writerow(["mean"] + [f"{report[t]['mean']:.6f}" for t in tious])
