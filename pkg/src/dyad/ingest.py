"""Readers and writers for raw videos, feature files and flow files.

All binary formats are little-endian. GV8 holds 8-bit grayscale frames,
FV32 holds float32 vectors, FL32 holds dense (u, v) flow planes for
consecutive frame pairs.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GV8_MAGIC = b"GV8\0"
FV32_MAGIC = b"FV32"
FL32_MAGIC = b"FL32"


class FormatError(ValueError):
    """Raised when a file does not match its declared binary layout."""


@dataclass(frozen=True)
class GrayVideo:
    """A stack of grayscale frames, shape (frame_count, height, width), uint8."""

    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise ValueError("video needs shape (frames, height, width) with at least one frame")
        if frames.dtype != np.uint8:
            raise ValueError("video frames must be uint8")
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class SegmentView:
    video_id: str
    index: int
    start: int
    end: int

    @property
    def frame_count(self) -> int:
        return self.end - self.start

    @property
    def segment_id(self) -> str:
        return f"{self.video_id}_{self.index:02d}"

    @property
    def center(self) -> float:
        """Midpoint of the covered frame indices."""
        return (self.start + self.end - 1) / 2.0


@dataclass
class ManifestEntry:
    video: str
    features: str | None = None
    flow: str | None = None
    ground_truth: str | None = None

    @property
    def video_id(self) -> str:
        return Path(self.video).stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    segment_count_per_video: int = 32
    root: Path = field(default=Path("."), repr=False, compare=False)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.root / p


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_atomic(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def decode_gv8(data: bytes) -> GrayVideo:
    if len(data) < 16 or data[:4] != GV8_MAGIC:
        raise FormatError("malformed GV8 header")
    width, height, count = struct.unpack_from("<3I", data, 4)
    if width == 0 or height == 0 or count == 0:
        raise FormatError("malformed GV8 header: zero dimension")
    need = width * height * count
    payload = data[16:]
    if len(payload) < need:
        raise FormatError(f"truncated GV8 payload: need {need} bytes, have {len(payload)}")
    if len(payload) > need:
        raise FormatError("trailing bytes after GV8 payload")
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(count, height, width).copy()
    return GrayVideo(frames)


def encode_gv8(video: GrayVideo) -> bytes:
    header = GV8_MAGIC + struct.pack("<3I", video.width, video.height, video.frame_count)
    return header + np.ascontiguousarray(video.frames, dtype=np.uint8).tobytes()


def read_gv8(path) -> GrayVideo:
    return decode_gv8(_read_bytes(path))


def write_gv8(path, video: GrayVideo) -> None:
    _write_atomic(path, encode_gv8(video))


def split_segments(video: GrayVideo, count: int = 32, video_id: str = "video") -> list[SegmentView]:
    """Cut a video into `count` contiguous, non-overlapping segments.

    Sizes are floor(frames / count); the first ``frames % count`` segments
    take one extra frame. Every segment must hold at least two frames so a
    flow pair exists.
    """
    if count < 1:
        raise ValueError("segment count must be >= 1")
    n = video.frame_count if isinstance(video, GrayVideo) else int(video)
    if n < 2 * count:
        raise ValueError(f"{n} frames cannot be split into {count} segments of >= 2 frames")
    base, extra = divmod(n, count)
    views = []
    start = 0
    for i in range(count):
        size = base + (1 if i < extra else 0)
        views.append(SegmentView(video_id, i, start, start + size))
        start += size
    return views


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"non-finite value in {what}")


def decode_fv32(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != FV32_MAGIC:
        raise FormatError("malformed FV32 header")
    count, dim = struct.unpack_from("<2I", data, 4)
    need = count * dim * 4
    payload = data[12:]
    if len(payload) != need:
        raise FormatError(
            f"FV32 dimension mismatch: header declares {count}x{dim} floats, payload has {len(payload)} bytes"
        )
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    _check_finite(vectors, "FV32 file")
    return vectors


def encode_fv32(vectors) -> bytes:
    arr = np.asarray(vectors, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("FV32 expects a 2-D array (count, dim)")
    _check_finite(arr, "FV32 vectors")
    return FV32_MAGIC + struct.pack("<2I", *arr.shape) + arr.tobytes()


def load_features(path) -> np.ndarray:
    """Load an FV32 file as a (count, dim) float32 array."""
    return decode_fv32(_read_bytes(path))


def store_features(path, vectors) -> None:
    _write_atomic(path, encode_fv32(vectors))


def decode_fl32(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != FL32_MAGIC:
        raise FormatError("malformed FL32 header")
    pairs, height, width = struct.unpack_from("<3I", data, 4)
    need = pairs * 2 * height * width * 4
    payload = data[16:]
    if len(payload) != need:
        raise FormatError(
            f"FL32 dimension mismatch: header declares {pairs} pairs of {height}x{width}, "
            f"payload has {len(payload)} bytes"
        )
    flows = np.frombuffer(payload, dtype="<f4").reshape(pairs, 2, height, width).copy()
    _check_finite(flows, "FL32 file")
    return flows


def encode_fl32(flows) -> bytes:
    arr = np.asarray(flows, dtype="<f4")
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ValueError("FL32 expects shape (pairs, 2, height, width)")
    _check_finite(arr, "FL32 flows")
    pairs, _, height, width = arr.shape
    return FL32_MAGIC + struct.pack("<3I", pairs, height, width) + arr.tobytes()


def load_flow(path) -> np.ndarray:
    """Load an FL32 file as a (pairs, 2, height, width) float32 array; plane 0 is u."""
    return decode_fl32(_read_bytes(path))


def store_flow(path, flows) -> None:
    _write_atomic(path, encode_fl32(flows))


def read_ground_truth(path) -> np.ndarray:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: ground truth must be 0 or 1, got {line!r}")
            labels.append(int(line))
    return np.asarray(labels, dtype=np.int8)


def write_ground_truth(path, labels) -> None:
    text = "".join(f"{int(v)}\n" for v in labels)
    _write_atomic(path, text.encode("utf-8"))


_ENTRY_KEYS = {"video", "features", "flow", "ground_truth"}
_MANIFEST_KEYS = {"entries", "segment_count_per_video"}


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise FormatError("manifest must be a JSON object")
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise FormatError(f"unknown manifest keys: {sorted(unknown)}")
    count = doc.get("segment_count_per_video", 32)
    if not isinstance(count, int) or count < 1:
        raise FormatError("segment_count_per_video must be a positive integer")
    entries = []
    for raw in doc.get("entries", []):
        if not isinstance(raw, dict) or "video" not in raw:
            raise FormatError("each manifest entry needs a 'video' path")
        unknown = set(raw) - _ENTRY_KEYS
        if unknown:
            raise FormatError(f"unknown manifest entry keys: {sorted(unknown)}")
        entries.append(ManifestEntry(**raw))
    manifest = DatasetManifest(entries, count, root=path.parent)
    for entry in manifest.entries:
        for p in (entry.video, entry.features, entry.flow, entry.ground_truth):
            if p is not None and not manifest.resolve(p).exists():
                raise FormatError(f"manifest path does not exist: {p}")
    return manifest


def save_manifest(path, manifest: DatasetManifest) -> None:
    doc = {
        "entries": [
            {k: v for k, v in vars(e).items() if v is not None} for e in manifest.entries
        ],
        "segment_count_per_video": manifest.segment_count_per_video,
    }
    _write_atomic(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))
