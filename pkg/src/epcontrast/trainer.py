"""Desk-scale pre-training and evaluation.

The loop per optimizer step: pick a scene, draw a two-view augmentation
pair, encode both views, evaluate the configured contrastive loss, push
gradients back through both encoder passes, and take one bias-corrected
adaptive-moment step with the scheduled learning rate. Superpoint segments
are computed once per scene from the un-augmented cloud and shared by both
views, which is sound because augmentation preserves point order.

Scenes are synthetic: Gaussian blobs in a room, one label per blob, with
blob colors taken from a fixed palette so the same label means the same
base color in every scene (that is what makes a probe trained on some
scenes transfer to held-out ones).

Evaluation is a linear probe: multinomial logistic regression trained by
full-batch gradient descent on frozen per-point embeddings, scored as
point-wise accuracy on held-out scenes, with optional label-fraction
masking to emulate sparse annotation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .encoder import INPUT_DIM, MlpParams, encoder_backward, encoder_forward, encoder_init
from .losses import LossConfig, ag_contrast, channel_contrast, ep_contrast, point_infonce
from .pointcloud import AugmentParams, PointCloud, make_view_pair
from .rng import derive_seed, substream
from .superpoint import KMeansConfig, SegmentAssignment, kmeans_segments

# sub-stream tags so independent consumers of the run seed never collide
_TAG_INIT = 1
_TAG_SHUFFLE = 2
_TAG_VIEWS = 3
_TAG_NEG = 4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 1
    base_lr: float = 0.01
    lr_schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentParams = field(default_factory=AugmentParams)
    loss_kind: str = "ep"
    hidden: int = 64
    embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0:
            raise ValueError(f"base_lr must be >= 0, got {self.base_lr}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.loss_kind not in ("pc", "ag", "cc", "ep"):
            raise ValueError(f"loss_kind must be one of pc/ag/cc/ep, got {self.loss_kind!r}")
        if min(self.hidden, self.embed_dim) < 1:
            raise ValueError("hidden and embed_dim must be >= 1")


@dataclass(frozen=True)
class OptimState:
    """First/second moment accumulators mirroring the parameters, plus step."""

    m: MlpParams
    v: MlpParams
    step: int = 0


def optim_init(params: MlpParams) -> OptimState:
    zeros = params.map(np.zeros_like)
    return OptimState(zeros, zeros.map(np.copy), 0)


def adam_step(
    params: MlpParams,
    grads: MlpParams,
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MlpParams, OptimState]:
    """One bias-corrected adaptive-moment update; pure, returns new values."""
    t = state.step + 1
    m = state.m.zip_map(grads, lambda m_, g: beta1 * m_ + (1.0 - beta1) * g)
    v = state.v.zip_map(grads, lambda v_, g: beta2 * v_ + (1.0 - beta2) * g * g)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params = params.zip_map(
        m.zip_map(v, lambda m_, v_: (m_ / c1) / (np.sqrt(v_ / c2) + eps)),
        lambda p, update: p - lr * update,
    )
    return new_params, OptimState(m, v, t)


@dataclass(frozen=True)
class SyntheticSceneConfig:
    num_clusters: int = 8
    points_per_cluster: int = 128
    cluster_std: float = 0.35
    color_noise_std: float = 0.08
    extent: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.num_clusters < 1 or self.points_per_cluster < 1:
            raise ValueError("cluster counts must be >= 1")
        if self.cluster_std < 0 or self.color_noise_std < 0:
            raise ValueError("standard deviations must be >= 0")
        if self.extent <= 0:
            raise ValueError(f"room extent must be positive, got {self.extent}")


def class_palette(num_classes: int) -> np.ndarray:
    """Fixed, well-separated base colors indexed by class id."""
    ids = np.arange(num_classes)
    phase = 2.0 * np.pi * ids / max(num_classes, 1)
    rgb = np.stack(
        [
            0.5 + 0.45 * np.cos(phase),
            0.5 + 0.45 * np.cos(phase - 2.0 * np.pi / 3.0),
            0.5 + 0.45 * np.cos(phase + 2.0 * np.pi / 3.0),
        ],
        axis=1,
    )
    return np.clip(rgb, 0.0, 1.0)


def generate_scene(cfg: SyntheticSceneConfig, rng: np.random.Generator) -> PointCloud:
    """One labeled synthetic scene of Gaussian color-coded blobs."""
    k, ppc = cfg.num_clusters, cfg.points_per_cluster
    centers = rng.uniform(0.0, cfg.extent, size=(k, 3))
    palette = class_palette(k)
    positions = np.empty((k * ppc, 3))
    colors = np.empty((k * ppc, 3))
    labels = np.repeat(np.arange(k), ppc)
    for ci in range(k):
        lo, hi = ci * ppc, (ci + 1) * ppc
        positions[lo:hi] = centers[ci] + rng.normal(0.0, cfg.cluster_std, size=(ppc, 3))
        noise = rng.normal(0.0, cfg.color_noise_std, size=(ppc, 3))
        colors[lo:hi] = np.clip(palette[ci] + noise, 0.0, 1.0)
    return PointCloud(positions, colors, labels)


def _scheduled_lr(base_lr: float, schedule: str, step: int, total_steps: int) -> float:
    if schedule == "constant" or total_steps <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def _loss_for_kind(kind, emb1, emb2, seg, loss_cfg, rng):
    if kind == "ep":
        return ep_contrast(emb1, emb2, seg, loss_cfg)
    if kind == "ag":
        return ag_contrast(emb1, emb2, seg, loss_cfg)
    if kind == "cc":
        return channel_contrast(emb1, emb2, loss_cfg)
    return point_infonce(emb1, emb2, loss_cfg, rng)


def pretrain(
    scenes: list[PointCloud],
    train_cfg: TrainConfig,
    kmeans_cfg: KMeansConfig,
) -> tuple[MlpParams, list[tuple[int, int, float, float]]]:
    """Pre-train the encoder; returns final parameters and the loss history.

    History rows are (step, epoch, loss, lr), one per optimizer step; with
    batch_size > 1 the loss is the batch mean and gradients are averaged
    before the update.
    """
    if not scenes:
        raise ValueError("pretraining needs at least one scene")
    segments: list[SegmentAssignment] = [kmeans_segments(s, kmeans_cfg) for s in scenes]

    params = encoder_init(
        INPUT_DIM, train_cfg.hidden, train_cfg.embed_dim,
        derive_seed(train_cfg.seed, _TAG_INIT),
    )
    state = optim_init(params)

    batches_per_epoch = math.ceil(len(scenes) / train_cfg.batch_size)
    total_steps = train_cfg.epochs * batches_per_epoch
    history: list[tuple[int, int, float, float]] = []
    step = 0
    for epoch in range(train_cfg.epochs):
        order = substream(train_cfg.seed, _TAG_SHUFFLE, epoch).permutation(len(scenes))
        for start in range(0, len(scenes), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            grad_sum: MlpParams | None = None
            loss_sum = 0.0
            for sidx in batch:
                sidx = int(sidx)
                pair = make_view_pair(
                    scenes[sidx], train_cfg.augment,
                    derive_seed(train_cfg.seed, _TAG_VIEWS, epoch, sidx),
                )
                emb1, cache1 = encoder_forward(params, pair.view1)
                emb2, cache2 = encoder_forward(params, pair.view2)
                neg_rng = substream(train_cfg.seed, _TAG_NEG, epoch, sidx)
                out = _loss_for_kind(
                    train_cfg.loss_kind, emb1, emb2, segments[sidx],
                    train_cfg.loss, neg_rng,
                )
                g = encoder_backward(params, cache1, out.grad_f1).zip_map(
                    encoder_backward(params, cache2, out.grad_f2), np.add
                )
                loss_sum += out.value
                grad_sum = g if grad_sum is None else grad_sum.zip_map(g, np.add)
            inv = 1.0 / len(batch)
            grads = grad_sum.map(lambda a: a * inv)
            lr = _scheduled_lr(train_cfg.base_lr, train_cfg.lr_schedule, step, total_steps)
            params, state = adam_step(
                params, grads, state, lr,
                train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps,
            )
            history.append((step, epoch, loss_sum * inv, lr))
            step += 1
    return params, history


@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 200
    lr: float = 1.0
    label_fraction: float = 1.0
    holdout_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 < self.label_fraction <= 1:
            raise ValueError(f"label_fraction must be in (0, 1], got {self.label_fraction}")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError(
                f"holdout_fraction must be in (0, 1), got {self.holdout_fraction}"
            )


def _stack_embeddings(params, scenes):
    feats, labels = [], []
    for scene in scenes:
        if scene.labels is None:
            raise ValueError("probing needs labeled scenes")
        emb, _ = encoder_forward(params, scene)
        feats.append(emb)
        labels.append(scene.labels)
    return np.vstack(feats), np.concatenate(labels)


def linear_probe(params: MlpParams, scenes: list[PointCloud], cfg: ProbeConfig) -> float:
    """Accuracy of a softmax probe on frozen embeddings over held-out scenes.

    The trailing ``holdout_fraction`` of the scene list is the evaluation
    split; the probe sees a ``label_fraction`` subsample of the training
    points. Classes never seen by the probe are warned about and their
    held-out points counted as errors.
    """
    n_hold = max(1, round(cfg.holdout_fraction * len(scenes)))
    if n_hold >= len(scenes):
        raise ValueError(
            f"holdout of {n_hold} scenes leaves no training scenes (have {len(scenes)})"
        )
    train_scenes, eval_scenes = scenes[:-n_hold], scenes[-n_hold:]
    x_train, y_train = _stack_embeddings(params, train_scenes)
    x_eval, y_eval = _stack_embeddings(params, eval_scenes)
    num_classes = int(max(y_train.max(), y_eval.max())) + 1

    if cfg.label_fraction < 1.0:
        keep = max(1, round(cfg.label_fraction * x_train.shape[0]))
        chosen = substream(cfg.seed, 0).choice(x_train.shape[0], size=keep, replace=False)
        x_train, y_train = x_train[chosen], y_train[chosen]

    seen = np.unique(y_train)
    missing = np.setdiff1d(np.unique(y_eval), seen)
    if missing.size:
        warnings.warn(
            f"classes {missing.tolist()} absent from probe training; "
            "their held-out points are scored as errors",
            stacklevel=2,
        )

    # standardize with training statistics so one fixed lr works across encoders
    mu = x_train.mean(axis=0)
    sd = np.maximum(x_train.std(axis=0), 1e-8)
    x_train = (x_train - mu) / sd
    x_eval = (x_eval - mu) / sd
    x_train = np.hstack([x_train, np.ones((x_train.shape[0], 1))])
    x_eval = np.hstack([x_eval, np.ones((x_eval.shape[0], 1))])

    w = np.zeros((x_train.shape[1], num_classes))
    onehot = np.zeros((x_train.shape[0], num_classes))
    onehot[np.arange(x_train.shape[0]), y_train] = 1.0
    inv_n = 1.0 / x_train.shape[0]
    for _ in range(cfg.steps):
        logits = x_train @ w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        w -= cfg.lr * (x_train.T @ (p - onehot)) * inv_n

    pred = np.argmax(x_eval @ w, axis=1)
    correct = pred == y_eval
    if missing.size:
        correct &= ~np.isin(y_eval, missing)
    return float(correct.mean())
