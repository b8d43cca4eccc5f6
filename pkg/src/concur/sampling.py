"""Positive-clip sampling under a growing temporal span, plus augmentation.

The span from which positive clips are drawn starts small (temporally close,
so semantically similar pairs) and widens linearly over the first
``hardening_epochs`` epochs, then stays at its maximum. Frame indices are
1-based throughout this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .rng import Stream
from .videos import Video


@dataclass
class CurriculumConfig:
    initial_span: int = 8
    max_span: int = 48
    hardening_epochs: int | None = None  # None: half the training epochs
    mode: str = "bounded"  # or "full_training": harden over the whole run
    enabled: bool = True

    def validate(self):
        if not 1 <= self.initial_span <= self.max_span:
            raise ValueError("need 1 <= initial_span <= max_span")
        if self.hardening_epochs is not None and self.hardening_epochs < 1:
            raise ValueError("hardening_epochs must be >= 1")
        if self.mode not in ("bounded", "full_training"):
            raise ValueError(f"unknown curriculum mode {self.mode!r}")

    def resolve(self, total_epochs: int) -> "CurriculumConfig":
        """Fill in defaults that depend on the run length."""
        if not self.enabled:
            return replace(self, initial_span=self.max_span, hardening_epochs=1)
        if self.mode == "full_training":
            return replace(self, hardening_epochs=total_epochs)
        if self.hardening_epochs is None:
            return replace(self, hardening_epochs=max(1, total_epochs // 2))
        return self


@dataclass(frozen=True)
class TemporalWindow:
    start: int  # 1-based index of the first frame in the window
    span: int

    @property
    def last(self) -> int:
        return self.start + self.span - 1


@dataclass
class Clip:
    frames: np.ndarray  # (3, t, h, w)
    start_frame: int  # 1-based start within the source video, pre-augmentation
    video_id: int


def temporal_span(epoch: int, cfg: CurriculumConfig) -> int:
    """Span (frames) scheduled for ``epoch``: linear ramp, then constant."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if not cfg.enabled:
        return cfg.max_span
    hardening = cfg.hardening_epochs
    if hardening is None:
        raise ValueError("hardening_epochs unresolved; call cfg.resolve(total_epochs)")
    raw = cfg.initial_span + (cfg.max_span - cfg.initial_span) / hardening * epoch
    return min(cfg.max_span, int(math.floor(raw + 0.5)))


def sample_window(n_frames: int, span: int, rng: Stream) -> TemporalWindow:
    """Uniform window start on [1, n_frames - span]; degenerate span pins start=1."""
    if span > n_frames:
        raise ValueError(f"span {span} exceeds video length {n_frames}")
    if span == n_frames:
        return TemporalWindow(start=1, span=span)
    start = int(rng.integers(1, n_frames - span + 1))
    return TemporalWindow(start=start, span=span)


def sample_clips(video: Video, window: TemporalWindow, n_clips: int, clip_len: int, rng: Stream) -> list:
    """Draw ``n_clips`` independent clips of ``clip_len`` consecutive frames.

    Starts are uniform on [window.start, window.start + span - clip_len];
    clips may overlap. Each clip records its start frame.
    """
    if clip_len > window.span:
        raise ValueError(f"clip length {clip_len} exceeds window span {window.span}")
    hi = window.start + window.span - clip_len
    starts = rng.integers(window.start, hi + 1, size=n_clips)
    clips = []
    for s in starts:
        s = int(s)
        frames = np.ascontiguousarray(video.frames[:, s - 1 : s - 1 + clip_len])
        clips.append(Clip(frames=frames, start_frame=s, video_id=video.seed))
    return clips


# -- augmentation ---------------------------------------------------------------


@dataclass
class AugmentConfig:
    crop_area: tuple = (0.2, 0.76)
    crop_aspect: tuple = (3 / 4, 4 / 3)
    hflip_prob: float = 0.5
    color_prob: float = 0.8
    color_strength: float = 0.5
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)
    out_size: int = 16

    def validate(self):
        for name in ("hflip_prob", "color_prob", "grayscale_prob", "blur_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        lo, hi = self.crop_area
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("crop_area must satisfy 0 < lo <= hi <= 1")

    def spatial_only(self) -> "AugmentConfig":
        """Variant with only crop/resize and flip (the fine-tuning recipe)."""
        return replace(self, color_prob=0.0, grayscale_prob=0.0, blur_prob=0.0)


_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (3, t, h, w); exact identity when sizes match."""
    _, _, h, w = frames.shape
    if (h, w) == (out_h, out_w):
        return frames.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(src - lo, 0.0, 1.0)
        return lo, hi, frac.astype(np.float32)

    ylo, yhi, fy = axis_coords(h, out_h)
    xlo, xhi, fx = axis_coords(w, out_w)
    rows_lo = frames[:, :, ylo, :]
    rows_hi = frames[:, :, yhi, :]
    rows = rows_lo * (1 - fy)[None, None, :, None] + rows_hi * fy[None, None, :, None]
    cols = rows[:, :, :, xlo] * (1 - fx) + rows[:, :, :, xhi] * fx
    return cols.astype(frames.dtype)


def _hue_rotation_matrix(turns: float) -> np.ndarray:
    """Rotation of RGB about the gray axis by ``turns`` of a full circle."""
    theta = 2 * np.pi * turns
    c, s = np.cos(theta), np.sin(theta)
    one_third = 1.0 / 3.0
    root = np.sqrt(one_third)
    m = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            m[i, j] = one_third * (1 - c) + (c if i == j else 0.0)
    m[0, 1] += -root * s
    m[0, 2] += root * s
    m[1, 0] += root * s
    m[1, 2] += -root * s
    m[2, 0] += -root * s
    m[2, 1] += root * s
    return m


def augment(clip: Clip, cfg: AugmentConfig, rng: Stream) -> Clip:
    """One stochastic view of a clip; one parameter draw shared by all frames.

    Order: random resized crop (always), horizontal flip, color distortion,
    grayscale, Gaussian blur; output clamped to [0, 1] at (3, t, out, out).
    """
    frames = clip.frames.astype(np.float32)
    _, t, h, w = frames.shape

    # crop: sample target area and aspect ratio, then a uniform placement
    area_frac = float(rng.uniform(*cfg.crop_area))
    aspect = float(np.exp(rng.uniform(np.log(cfg.crop_aspect[0]), np.log(cfg.crop_aspect[1]))))
    target = area_frac * h * w
    cw = min(w, max(1, int(round(math.sqrt(target * aspect)))))
    ch = min(h, max(1, int(round(math.sqrt(target / aspect)))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    frames = frames[:, :, top : top + ch, left : left + cw]
    frames = resize_bilinear(frames, cfg.out_size, cfg.out_size)

    if rng.uniform() < cfg.hflip_prob:
        frames = frames[:, :, :, ::-1].copy()

    if rng.uniform() < cfg.color_prob:
        s = cfg.color_strength
        brightness = float(rng.uniform(max(0.0, 1 - 0.4 * s), 1 + 0.4 * s))
        contrast = float(rng.uniform(max(0.0, 1 - 0.4 * s), 1 + 0.4 * s))
        saturation = float(rng.uniform(max(0.0, 1 - 0.4 * s), 1 + 0.4 * s))
        hue = float(rng.uniform(-0.1 * s, 0.1 * s))
        frames = frames * brightness
        luma = np.tensordot(_LUMA, frames, axes=([0], [0]))[None]
        frames = contrast * frames + (1 - contrast) * luma.mean(axis=(2, 3), keepdims=True)
        frames = saturation * frames + (1 - saturation) * luma
        frames = np.tensordot(_hue_rotation_matrix(hue), frames, axes=([1], [0]))

    if rng.uniform() < cfg.grayscale_prob:
        luma = np.tensordot(_LUMA, frames, axes=([0], [0]))
        frames = np.repeat(luma[None], 3, axis=0)

    if rng.uniform() < cfg.blur_prob:
        sigma = float(rng.uniform(*cfg.blur_sigma))
        frames = gaussian_filter1d(frames, sigma, axis=2, mode="nearest")
        frames = gaussian_filter1d(frames, sigma, axis=3, mode="nearest")

    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    return Clip(frames=frames, start_frame=clip.start_frame, video_id=clip.video_id)
