"""Optimization loops: contrastive pretraining and downstream classification.

Every stochastic decision draws from a stream named by (seed, epoch, step,
slot), so a run's metrics are a pure function of (config, seed) regardless
of how many workers generated the data. One momentum update and one queue
enqueue happen per optimization step, in that order, after the gradient step.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .config import OptimConfig, RunConfig
from .evaluation import accuracy, multiclip_predict
from .losses import KeyQueue, PositiveGroup, concur_loss, contrastive_loss
from .model import VideoModel
from .rng import Stream
from .sampling import TemporalWindow, augment, sample_clips, sample_window, temporal_span
from .videos import make_splits, resample_fps


class TrainingAborted(RuntimeError):
    """Raised when a loss or gradient goes non-finite; carries a step dump."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


def lr_at(step: int, steps_per_epoch: int, cfg: OptimConfig, total_epochs: int) -> float:
    """Linear warmup from zero to base, then cosine decay to zero."""
    if step < 0:
        raise ValueError("step must be non-negative")
    total = total_epochs * steps_per_epoch
    warmup = min(cfg.warmup_epochs * steps_per_epoch, total)
    if warmup > 0 and step < warmup:
        return cfg.base_lr * step / warmup
    if total <= warmup:
        return cfg.base_lr
    progress = min(1.0, (step - warmup) / (total - warmup))
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _decays(name: str) -> bool:
    # Per-channel affine parameters and the distance-head bias shrink to
    # degenerate configurations under decay, so they are exempt.
    return not (name.endswith(".gamma") or name.endswith(".beta") or name == "cs_head.b")


class MomentumSGD:
    """SGD with velocity and weight decay folded into the gradient."""

    def __init__(self, params: dict, cfg: OptimConfig):
        self.params = params
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float):
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise TrainingAborted(f"non-finite gradient in {name!r}", {"parameter": name})
            if self.cfg.weight_decay and _decays(name):
                g = g + self.cfg.weight_decay * p.data
            v = self.velocity[name]
            v *= self.cfg.momentum
            v += g
            p.data -= lr * v


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    n, c = logits.shape
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    per_row = ad.log_sum_exp(logits, axis=1) - ad.tensor_sum(ad.mul(logits, Tensor(onehot)), axis=1)
    return ad.mean(per_row)


@dataclass
class PretrainResult:
    model: VideoModel
    queue: KeyQueue
    metrics: list
    train_videos: list
    test_videos: list
    config: RunConfig


def _prepare_videos(cfg: RunConfig):
    train, test = make_splits(cfg.dataset, workers=cfg.workers)
    if cfg.target_fps is not None:
        train = [resample_fps(v, cfg.target_fps) for v in train]
        test = [resample_fps(v, cfg.target_fps) for v in test]
    return train, test


def _write_metrics(path, metrics):
    with open(path, "w") as f:
        for row in metrics:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def pretrain(cfg: RunConfig, out_dir=None) -> PretrainResult:
    """Self-supervised pretraining; returns the model, queue, and per-epoch metrics."""
    cfg.validate()
    root = Stream.from_seed(cfg.seed)
    train, test = _prepare_videos(cfg)
    n_frames = train[0].n_frames
    rho, t = cfg.loss.clips_per_video, cfg.clip_len

    model = VideoModel(cfg.model, seed=cfg.seed)
    queue = KeyQueue(cfg.loss.queue_capacity, cfg.model.embed_dim)
    trainable = model.trainable(encoder=True, context_head=cfg.loss.context_enabled)
    opt = MomentumSGD(trainable, cfg.optim)
    curriculum = cfg.curriculum.resolve(cfg.epochs)
    distance_scale = 1.0 / t if cfg.loss.context_distance_unit == "clips" else 1.0

    steps_per_epoch = len(train) // cfg.batch_size
    if steps_per_epoch < 1:
        raise ValueError("batch_size exceeds training-set size")

    metrics = []
    global_step = 0
    for epoch in range(cfg.epochs):
        span = min(n_frames, max(t, temporal_span(epoch, curriculum)))
        order = root.child("order", epoch).permutation(len(train))
        sums = {"total": 0.0, "contrastive": 0.0, "context": 0.0, "lr": 0.0}
        for step in range(steps_per_epoch):
            lr = lr_at(global_step, steps_per_epoch, cfg.optim, cfg.epochs)
            batch = [train[i] for i in order[step * cfg.batch_size : (step + 1) * cfg.batch_size]]

            views, starts = [], []
            for slot, video in enumerate(batch):
                srng = root.child("sample", epoch, step, slot)
                window = sample_window(video.n_frames, span, srng.child("window"))
                clips = sample_clips(video, window, rho, t, srng.child("clips"))
                views.extend(augment(c, cfg.augment, srng.child("augment", j)) for j, c in enumerate(clips))
                starts.append([c.start_frame for c in clips])

            batch_arr = np.stack([v.frames for v in views])
            q_emb = model.embed(Tensor(batch_arr))
            k_emb = model.embed(batch_arr, momentum=True)

            total = None
            mi_sum = cs_sum = 0.0
            for i in range(len(batch)):
                rows = slice(i * rho, (i + 1) * rho)
                group = PositiveGroup(
                    queries=q_emb[(rows,)],
                    keys=Tensor(k_emb.data[rows]),
                    start_frames=np.array(starts[i]),
                )
                if cfg.loss.context_enabled:
                    loss_i, comps = concur_loss(
                        group, queue, cfg.loss.temperature, model.predict_distance,
                        cs_weight=cfg.loss.context_weight, distance_scale=distance_scale,
                    )
                    cs_sum += comps["context"]
                    mi_sum += comps["contrastive"]
                else:
                    loss_i = contrastive_loss(group, queue, cfg.loss.temperature)
                    mi_sum += float(loss_i.data)
                total = loss_i if total is None else total + loss_i
            total = total / len(batch)

            if not np.isfinite(total.data):
                raise TrainingAborted(
                    "non-finite loss",
                    {"epoch": epoch, "step": step, "lr": lr, "loss": float(total.data)},
                )

            opt.zero_grad()
            ad.backward(total)
            opt.step(lr)
            model.momentum_update(cfg.key_momentum)
            queue.enqueue(k_emb.data)

            sums["total"] += float(total.data)
            sums["contrastive"] += mi_sum / len(batch)
            sums["context"] += cs_sum / len(batch)
            sums["lr"] += lr
            global_step += 1

        row = {
            "epoch": epoch,
            "temporal_span": span,
            "loss_contrastive": sums["contrastive"] / steps_per_epoch,
            "loss_context": sums["context"] / steps_per_epoch,
            "loss_total": sums["total"] / steps_per_epoch,
            "lr": sums["lr"] / steps_per_epoch,
            "queue_fill": queue.fill,
        }
        metrics.append(row)

        if out_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_epoch{epoch + 1}.bin"), model.state_arrays())

    if out_dir:
        _write_metrics(os.path.join(out_dir, "metrics.jsonl"), metrics)
        save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), model.state_arrays())

    return PretrainResult(model=model, queue=queue, metrics=metrics,
                          train_videos=train, test_videos=test, config=cfg)


@dataclass
class ClassifierResult:
    model: VideoModel
    metrics: list
    train_accuracy: float
    test_accuracy: float


def train_classifier(cfg: RunConfig, model: VideoModel, freeze_encoder: bool,
                     out_dir=None, train=None, test=None) -> ClassifierResult:
    """Cross-entropy training of the classification head (plus the encoder
    unless frozen); augmentation keeps only crop/resize and flip."""
    cfg.validate()
    root = Stream.from_seed(cfg.seed).child("classifier")
    if train is None or test is None:
        train, test = _prepare_videos(cfg)
    t = cfg.clip_len
    aug = cfg.augment.spatial_only()

    model.add_classifier(cfg.dataset.n_classes, root.child("head"))
    if freeze_encoder:
        for p in model.params.values():
            p.requires_grad = False
        trainable = model.trainable(encoder=False, classifier=True)
    else:
        trainable = model.trainable(encoder=True, classifier=True)

    opt_cfg = OptimConfig(
        base_lr=cfg.eval.base_lr,
        momentum=cfg.optim.momentum,
        weight_decay=cfg.optim.weight_decay,
        warmup_epochs=cfg.eval.warmup_epochs,
    )
    opt = MomentumSGD(trainable, opt_cfg)
    epochs, batch_size = cfg.eval.epochs, cfg.eval.batch_size
    steps_per_epoch = max(1, len(train) // batch_size)

    metrics = []
    global_step = 0
    for epoch in range(epochs):
        order = root.child("order", epoch).permutation(len(train))
        loss_sum = 0.0
        hit = n_seen = 0
        for step in range(steps_per_epoch):
            lr = lr_at(global_step, steps_per_epoch, opt_cfg, epochs)
            batch = [train[i] for i in order[step * batch_size : (step + 1) * batch_size]]
            views, labels = [], []
            for slot, video in enumerate(batch):
                srng = root.child("sample", epoch, step, slot)
                window = TemporalWindow(start=1, span=video.n_frames)
                clip = sample_clips(video, window, 1, t, srng.child("clip"))[0]
                views.append(augment(clip, aug, srng.child("augment")))
                labels.append(video.label)
            labels = np.array(labels)
            logits = model.classify(model.encode(np.stack([v.frames for v in views])))
            loss = cross_entropy(logits, labels)
            if not np.isfinite(loss.data):
                raise TrainingAborted("non-finite loss", {"epoch": epoch, "step": step})
            opt.zero_grad()
            ad.backward(loss)
            opt.step(lr)
            loss_sum += float(loss.data)
            hit += int((logits.data.argmax(axis=1) == labels).sum())
            n_seen += len(labels)
            global_step += 1
        metrics.append(
            {"epoch": epoch, "loss": loss_sum / steps_per_epoch,
             "train_accuracy": hit / n_seen, "lr": lr}
        )

    test_acc = evaluate_accuracy(test, model, cfg)
    train_acc = evaluate_accuracy(train, model, cfg)
    if out_dir:
        _write_metrics(os.path.join(out_dir, "classifier_metrics.jsonl"), metrics)
    return ClassifierResult(model=model, metrics=metrics,
                            train_accuracy=train_acc, test_accuracy=test_acc)


def evaluate_accuracy(videos, model: VideoModel, cfg: RunConfig) -> float:
    scores = [multiclip_predict(v, model, cfg.clip_len, cfg.inference, cfg.augment.out_size) for v in videos]
    return accuracy(np.stack(scores), np.array([v.label for v in videos]))
