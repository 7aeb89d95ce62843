"""Synthetic surveillance-style clips with known anomalous segments.

Every video is a static random texture with per-frame sensor noise.
Anomalous segments (one contiguous run per video) carry a textured patch
that is brighter than the background by ``15 * separation`` grey levels
and moves ``motion_burst`` pixels per frame.

Two kinds of benign background events are sprinkled over random segments
regardless of their label: a global brightness flicker (appearance
change, no motion) and a "walker", an unbrightened patch drifting one
pixel per frame (slow motion, no appearance change). With
``separation=0`` and ``motion_burst=0`` anomalous segments are therefore
drawn from exactly the same distribution as normal ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import DatasetManifest, GrayVideo, ManifestEntry, save_manifest, split_segments, write_gv8, write_ground_truth

BLOB = 12
TEXTURE_LO, TEXTURE_HI = 40, 200
OFFSET_PER_SEPARATION = 15.0
FLICKER = 10
WALKER_STEP = 1


@dataclass(frozen=True)
class SynthSpec:
    videos: int = 8
    frames: int = 96
    size: int = 32
    segments: int = 32
    anomaly_rate: float = 0.25
    nuisance_rate: float = 0.1
    walker_rate: float = 0.1
    separation: float = 3.0
    motion_burst: int = 4
    jitter: int = 3
    seed: int = 7

    def __post_init__(self):
        if not 0.0 < self.anomaly_rate < 1.0:
            raise ValueError("anomaly_rate must lie in (0, 1)")
        for name in ("nuisance_rate", "walker_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.separation < 0 or self.motion_burst < 0 or self.jitter < 0:
            raise ValueError("separation, motion_burst and jitter must be nonnegative")
        if self.videos < 1 or self.segments < 1 or self.frames < 2 * self.segments:
            raise ValueError("need >= 1 video and >= 2 frames per segment")
        if self.size < BLOB + 2:
            raise ValueError(f"frame size must be at least {BLOB + 2}")

    @property
    def anomalous_per_video(self) -> int:
        return int(round(self.anomaly_rate * self.segments))

    @property
    def walker_per_video(self) -> int:
        return int(round(self.walker_rate * self.segments))

    @property
    def nuisance_per_video(self) -> int:
        return int(round(self.nuisance_rate * self.segments))


_DIRECTIONS = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


def _move_patch(frames, texture, rng, spec, first, last, offset, step) -> None:
    """Paste a background-textured patch, brightened by `offset`, that moves
    `step` pixels per frame and bounces off the frame border."""
    size = spec.size
    y, x = (int(c) for c in rng.integers(0, size - BLOB + 1, size=2))
    patch = texture[y:y + BLOB, x:x + BLOB] + offset
    dx, dy = _DIRECTIONS[int(rng.integers(len(_DIRECTIONS)))]
    for t in range(first, last):
        noise = rng.integers(-spec.jitter, spec.jitter + 1, size=patch.shape)
        frames[t, y:y + BLOB, x:x + BLOB] = patch + noise
        nx, ny = x + dx * step, y + dy * step
        if not 0 <= nx <= size - BLOB:
            dx = -dx
            nx = x + dx * step
        if not 0 <= ny <= size - BLOB:
            dy = -dy
            ny = y + dy * step
        x, y = min(max(nx, 0), size - BLOB), min(max(ny, 0), size - BLOB)


def make_video(spec: SynthSpec, index: int) -> tuple[GrayVideo, np.ndarray, np.ndarray]:
    """Return (video, per-frame ground truth, per-segment ground truth)."""
    rng = np.random.default_rng([spec.seed, index])
    n, size = spec.frames, spec.size
    texture = rng.integers(TEXTURE_LO, TEXTURE_HI + 1, size=(size, size)).astype(np.float64)
    views = split_segments(n, spec.segments, f"vid{index:03d}")

    seg_label = np.zeros(spec.segments, dtype=np.int8)
    n_anom = spec.anomalous_per_video
    start = int(rng.integers(0, spec.segments - n_anom + 1))
    seg_label[start:start + n_anom] = 1
    # background events hit any segment, independent of the anomaly label
    nuisance = set(rng.choice(spec.segments, size=spec.nuisance_per_video, replace=False).tolist())
    walkers = set(rng.choice(spec.segments, size=spec.walker_per_video, replace=False).tolist())

    frames = np.empty((n, size, size))
    for t in range(n):
        frames[t] = texture + rng.integers(-spec.jitter, spec.jitter + 1, size=(size, size))

    for v in views:
        if v.index in nuisance:
            signs = rng.choice([-1.0, 1.0], size=v.frame_count)
            for k, t in enumerate(range(v.start, v.end)):
                frames[t] += signs[k] * FLICKER

    for v in views:
        if v.index in walkers:
            _move_patch(frames, texture, rng, spec, v.start, v.end, offset=0.0, step=WALKER_STEP)

    # anomalous run: a bright patch lifted from the background that drifts and bounces
    run = [v for v in views if seg_label[v.index]]
    if run:
        _move_patch(frames, texture, rng, spec, run[0].start, run[-1].end,
                    offset=OFFSET_PER_SEPARATION * spec.separation, step=spec.motion_burst)

    frame_label = np.zeros(n, dtype=np.int8)
    for v in run:
        frame_label[v.start:v.end] = 1
    video = GrayVideo(np.clip(np.rint(frames), 0, 255).astype(np.uint8))
    return video, frame_label, seg_label


def generate(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write GV8 videos, ground-truth files and manifest.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(segment_count_per_video=spec.segments, root=out)
    for i in range(spec.videos):
        video, labels, _ = make_video(spec, i)
        name = f"vid{i:03d}"
        write_gv8(out / "videos" / f"{name}.gv8", video)
        write_ground_truth(out / "gt" / f"{name}.txt", labels)
        manifest.entries.append(ManifestEntry(video=f"videos/{name}.gv8", ground_truth=f"gt/{name}.txt"))
    save_manifest(out / "manifest.json", manifest)
    return manifest
