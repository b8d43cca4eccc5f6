"""Procedurally generated labeled videos.

Each video is a bright sprite moving over a slowly evolving background
texture. The class label selects the sprite's motion family, so labels are
recoverable from motion cues; the background drifts at a configurable rate,
so frames far apart in time differ more than nearby frames. Everything is a
bitwise-deterministic function of (label, seed, config).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import Stream

VIDEO_MAGIC = b"CVID1\n"

MOTION_FAMILIES = (
    "bounce",
    "circle",
    "zigzag",
    "sway_vertical",
    "sway_horizontal",
    "spiral",
    "figure_eight",
    "pulse",
)


@dataclass
class DatasetConfig:
    n_classes: int = 8
    videos_per_class: int = 50
    train_fraction: float = 0.8
    frames: int = 64
    size: int = 16
    fps: int = 15
    drift_rate: float = 1.0
    master_seed: int = 0

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if self.videos_per_class < 2:
            raise ValueError("videos_per_class must be at least 2")
        if self.frames < 2 or self.size < 4:
            raise ValueError("frames/size too small to render")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.drift_rate < 0:
            raise ValueError("drift_rate must be non-negative")


@dataclass
class Video:
    frames: np.ndarray  # (3, T, S, S) float32 in [0, 1]
    label: int
    fps: int
    seed: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


def _reflect(positions: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold an unbounded coordinate into [lo, hi] by reflection at the walls."""
    span = hi - lo
    phase = np.mod(positions - lo, 2 * span)
    return lo + np.where(phase <= span, phase, 2 * span - phase)


def _trajectory(label: int, t: np.ndarray, size: int, rng: Stream) -> tuple:
    """Sprite center (x, y) per frame plus a per-frame radius multiplier."""
    family = MOTION_FAMILIES[label % len(MOTION_FAMILIES)]
    # Labels past the base families reuse them at a faster tempo.
    tempo = 1.0 + 0.5 * (label // len(MOTION_FAMILIES))
    cx, cy = size / 2 + rng.uniform(-1.0, 1.0, size=2)
    amp = size * rng.uniform(0.28, 0.35)
    omega = tempo * (2 * np.pi / 16.0) * rng.uniform(0.85, 1.2)
    tau = omega * t + rng.uniform(0, 2 * np.pi)
    margin = 2.0
    lo, hi = margin, size - margin
    pulse = np.ones_like(t, dtype=np.float64)

    if family == "bounce":
        angle = rng.uniform(0, 2 * np.pi)
        speed = size * tempo * rng.uniform(0.11, 0.16)
        x = _reflect(cx + speed * np.cos(angle) * t, lo, hi)
        y = _reflect(cy + speed * np.sin(angle) * t, lo, hi)
    elif family == "circle":
        x = cx + amp * np.cos(tau)
        y = cy + amp * np.sin(tau)
    elif family == "zigzag":
        speed = size * tempo * rng.uniform(0.09, 0.13)
        x = _reflect(cx + speed * t, lo, hi)
        y = cy + amp * (2 / np.pi) * np.arcsin(np.sin(2.0 * tau))
    elif family == "sway_vertical":
        x = np.full_like(t, cx, dtype=np.float64)
        y = cy + amp * np.sin(tau)
    elif family == "sway_horizontal":
        x = cx + amp * np.sin(tau)
        y = np.full_like(t, cy, dtype=np.float64)
    elif family == "spiral":
        radius = amp * np.mod(0.15 + t / 24.0, 1.0)
        x = cx + radius * np.cos(2.0 * tau)
        y = cy + radius * np.sin(2.0 * tau)
    elif family == "figure_eight":
        x = cx + amp * np.sin(tau)
        y = cy + 0.6 * amp * np.sin(2.0 * tau)
    else:  # pulse: nearly static center, breathing size
        x = cx + 0.8 * np.sin(0.7 * tau)
        y = cy + 0.8 * np.cos(0.9 * tau)
        pulse = 1.0 + 0.65 * np.sin(tau)

    x = np.clip(x, 1.0, size - 1.0)
    y = np.clip(y, 1.0, size - 1.0)
    return x, y, pulse


# Generator texture/sprite ranges; module-level so experiments can probe them.
BG_BASE_RANGE = (0.38, 0.52)
BG_WAVE_COUNT = 2
BG_FREQ_CHOICES = (1, 2)  # cycles across the frame
BG_PHASE_SPEED = (0.06, 0.09)  # rad per frame at drift_rate 1
BG_AMPLITUDE = (0.04, 0.08)
SPRITE_RADIUS = (2.0, 2.6)  # px at size 16


def _background(t: np.ndarray, size: int, drift_rate: float, rng: Stream) -> np.ndarray:
    """Low-frequency texture (3, T, S, S) whose phases drift over time."""
    base = rng.uniform(*BG_BASE_RANGE, size=3)
    bg = np.broadcast_to(base[:, None, None, None], (3, len(t), size, size)).copy()
    coords = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    for _ in range(BG_WAVE_COUNT):
        kx, ky = (
            rng.choice(BG_FREQ_CHOICES, size=2)
            * (2 * np.pi / size)
            * rng.choice([-1.0, 1.0], size=2)
        )
        spatial = kx * xx + ky * yy + rng.uniform(0, 2 * np.pi)
        # Cap per-frame phase speed so frame distance grows with the gap
        # monotonically over the gaps we care about (up to half the video).
        omega = drift_rate * rng.uniform(*BG_PHASE_SPEED)
        phase = omega * t
        wave = np.sin(spatial[None, :, :] + phase[:, None, None])
        weights = rng.uniform(*BG_AMPLITUDE, size=3) * rng.choice([-1.0, 1.0], size=3)
        bg += weights[:, None, None, None] * wave[None]
    return bg


def generate_video(label: int, seed: int, config: DatasetConfig) -> Video:
    if not 0 <= label < config.n_classes:
        raise ValueError(f"label {label} outside [0, {config.n_classes})")
    rng = Stream.from_seed(seed).child("video")
    size, n = config.size, config.frames
    t = np.arange(n, dtype=np.float64)

    frames = _background(t, size, config.drift_rate, rng.child("background"))

    sprite_rng = rng.child("sprite")
    x, y, pulse = _trajectory(label, t, size, sprite_rng)
    # Bright in every channel (so the footprint is coherent across videos),
    # with a random dominant hue so color augmentations stay non-degenerate.
    color = np.full(3, 0.0)
    dominant = int(sprite_rng.integers(0, 3))
    color[dominant] = sprite_rng.uniform(0.9, 1.0)
    for c in range(3):
        if c != dominant:
            color[c] = sprite_rng.uniform(0.45, 0.75)
    radius = (size / 16.0) * sprite_rng.uniform(*SPRITE_RADIUS) * pulse

    coords = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dist = np.sqrt((xx[None] - x[:, None, None]) ** 2 + (yy[None] - y[:, None, None]) ** 2)
    weight = np.clip((radius[:, None, None] + 0.75 - dist) / 1.5, 0.0, 1.0)

    frames = frames * (1.0 - weight[None]) + color[:, None, None, None] * weight[None]
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    return Video(frames=frames, label=label, fps=config.fps, seed=seed)


def video_seeds(config: DatasetConfig) -> list:
    """Deterministic (label, seed, is_train) assignments for the whole corpus."""
    root = Stream.from_seed(config.master_seed).child("dataset")
    n_train = int(round(config.videos_per_class * config.train_fraction))
    out = []
    for label in range(config.n_classes):
        for idx in range(config.videos_per_class):
            seed = int(root.child("seed", label, idx).integers(1 << 62))
            out.append((label, seed, idx < n_train))
    return out


def make_splits(config: DatasetConfig, workers: int = 1) -> tuple:
    """Generate the corpus and return (train, test) video lists.

    Splits are disjoint by construction (each video has a unique derived
    seed), stratified per class, and identical for a given master_seed no
    matter how many workers generate them.
    """
    config.validate()
    assignments = video_seeds(config)

    def build(item):
        label, seed, _ = item
        return generate_video(label, seed, config)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            videos = list(pool.map(build, assignments))
    else:
        videos = [build(item) for item in assignments]

    train = [v for v, (_, _, is_train) in zip(videos, assignments) if is_train]
    test = [v for v, (_, _, is_train) in zip(videos, assignments) if not is_train]
    return train, test


def resample_fps(video: Video, target_fps: int) -> Video:
    if target_fps <= 0:
        raise ValueError("target_fps must be positive")
    if target_fps > video.fps:
        raise ValueError(f"cannot resample up: {video.fps} -> {target_fps} fps")
    stride = max(1, int(round(video.fps / target_fps)))
    if stride == 1:
        return video
    frames = np.ascontiguousarray(video.frames[:, ::stride])
    return Video(frames=frames, label=video.label, fps=int(round(video.fps / stride)), seed=video.seed)


# -- on-disk format -----------------------------------------------------------


def save_video(path, video: Video):
    header = {
        "label": int(video.label),
        "T": int(video.frames.shape[1]),
        "S": int(video.frames.shape[2]),
        "fps": int(video.fps),
        "seed": int(video.seed),
    }
    with open(path, "wb") as f:
        f.write(VIDEO_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        f.write(np.ascontiguousarray(video.frames, dtype="<f4").tobytes())


def load_video(path) -> Video:
    with open(path, "rb") as f:
        magic = f.read(len(VIDEO_MAGIC))
        if magic != VIDEO_MAGIC:
            raise ValueError(f"{path}: not a video dump (bad magic {magic!r})")
        header = json.loads(f.readline().decode("ascii"))
        t, s = header["T"], header["S"]
        raw = f.read(4 * 3 * t * s * s)
    frames = np.frombuffer(raw, dtype="<f4").reshape(3, t, s, s).copy()
    return Video(frames=frames, label=header["label"], fps=header["fps"], seed=header["seed"])
