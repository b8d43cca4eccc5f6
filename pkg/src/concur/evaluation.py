"""Evaluation protocols: multi-clip inference, embeddings, retrieval, accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import InferenceConfig
from .model import VideoModel
from .sampling import resize_bilinear
from .videos import Video


@dataclass
class EmbeddingIndex:
    vectors: np.ndarray  # (n, dim) encoder features, no projection head
    labels: np.ndarray  # (n,) class ids

    def __post_init__(self):
        if len(self.vectors) != len(self.labels):
            raise ValueError("one label per embedding required")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embeddings must be finite")


def _clip_starts(n_frames: int, clip_len: int, n_clips: int) -> np.ndarray:
    """Uniformly spaced 0-based clip offsets covering the video."""
    if n_frames < clip_len:
        raise ValueError(f"video of {n_frames} frames shorter than clip length {clip_len}")
    return np.round(np.linspace(0, n_frames - clip_len, n_clips)).astype(int)


def _spatial_views(frames: np.ndarray, out_size: int, n_crops: int) -> list:
    """Resize the short side to ``out_size``, then tile crops along the long side."""
    _, _, h, w = frames.shape
    scale = out_size / min(h, w)
    nh, nw = max(out_size, int(round(h * scale))), max(out_size, int(round(w * scale)))
    resized = resize_bilinear(frames, nh, nw)
    tops = np.round(np.linspace(0, nh - out_size, n_crops)).astype(int)
    lefts = np.round(np.linspace(0, nw - out_size, n_crops)).astype(int)
    return [resized[:, :, t : t + out_size, l : l + out_size] for t, l in zip(tops, lefts)]


def _video_clips(video: Video, clip_len: int, cfg: InferenceConfig, out_size: int) -> np.ndarray:
    """All (n_temporal_clips * n_spatial_crops) input clips for one video."""
    views = []
    for start in _clip_starts(video.n_frames, clip_len, cfg.n_temporal_clips):
        clip = video.frames[:, start : start + clip_len]
        views.extend(_spatial_views(clip, out_size, cfg.n_spatial_crops))
    return np.stack(views)


def multiclip_predict(video: Video, model: VideoModel, clip_len: int,
                      cfg: InferenceConfig, out_size: int) -> np.ndarray:
    """Class scores: mean of per-clip logits over temporal clips and crops."""
    clips = _video_clips(video, clip_len, cfg, out_size)
    logits = model.classify(model.encode(clips)).data
    return logits.mean(axis=0)


def _batched(items, size=64):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def embed_videos(videos, model: VideoModel, clip_len: int, cfg: InferenceConfig,
                 out_size: int) -> EmbeddingIndex:
    """Per-video mean of multi-clip encoder features (projection head unused)."""
    vectors = []
    for batch in _batched(videos):
        clips = np.concatenate([_video_clips(v, clip_len, cfg, out_size) for v in batch])
        feats = model.encode(clips).data
        per_video = cfg.n_temporal_clips * cfg.n_spatial_crops
        vectors.append(feats.reshape(len(batch), per_video, -1).mean(axis=1))
    return EmbeddingIndex(
        vectors=np.concatenate(vectors),
        labels=np.array([v.label for v in videos], dtype=int),
    )


def retrieval_recall(index: EmbeddingIndex, queries: EmbeddingIndex, ks) -> dict:
    """recall@K by cosine similarity: a query counts as correct when any of
    its top-K neighbours carries the query's label. Ties break by key order."""
    ks = sorted(int(k) for k in ks)
    if index.vectors.shape[1] != queries.vectors.shape[1]:
        raise ValueError(
            f"embedding dims differ: index {index.vectors.shape[1]} vs queries {queries.vectors.shape[1]}"
        )
    if ks and ks[-1] > len(index.vectors):
        raise ValueError(f"K={ks[-1]} exceeds index size {len(index.vectors)}")

    def unit(x):
        return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)

    sims = unit(queries.vectors) @ unit(index.vectors).T
    order = np.argsort(-sims, axis=1, kind="stable")
    ranked_labels = index.labels[order]
    hits = ranked_labels == queries.labels[:, None]
    return {k: float(hits[:, :k].any(axis=1).mean()) for k in ks}


def neighbour_lists(index: EmbeddingIndex, queries: EmbeddingIndex, k: int) -> list:
    """Top-k neighbour indices per query, for qualitative inspection."""
    def unit(x):
        return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)

    sims = unit(queries.vectors) @ unit(index.vectors).T
    return np.argsort(-sims, axis=1, kind="stable")[:, :k].tolist()


def accuracy(predictions, labels) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    return float((predictions.argmax(axis=1) == labels).mean())
