"""Block-matching motion estimation and the per-segment dynamicity score.

Flow fields are arrays of shape (2, height, width): plane 0 is the
horizontal displacement u, plane 1 the vertical displacement v, both in
pixels from frame a to frame b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pseudo_scoring import minmax_normalize

MOTION_BINS = 32


def _candidate_shifts(search: int) -> list[tuple[int, int]]:
    shifts = [(dx, dy) for dy in range(-search, search + 1) for dx in range(-search, search + 1)]
    # preference order among equal SADs: smallest |dx|+|dy|, then dy, then dx
    shifts.sort(key=lambda s: (abs(s[0]) + abs(s[1]), s[1], s[0]))
    return shifts


def estimate_flow(frame_a, frame_b, block: int = 8, search: int = 4) -> np.ndarray:
    """Exhaustive block matching with sum-of-absolute-differences cost.

    Each block of ``frame_a`` is compared against every displacement in
    ``[-search, search]**2`` whose target block lies fully inside
    ``frame_b``. Blocks at the right/bottom edge may be smaller than
    ``block`` when the frame size is not a multiple of it.
    """
    a = np.asarray(frame_a, dtype=np.int64)
    b = np.asarray(frame_b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"frame size mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape
    if h < block or w < block:
        raise ValueError(f"frame {h}x{w} smaller than block {block}")
    if block < 1 or search < 0:
        raise ValueError("block must be >= 1 and search >= 0")

    ys = np.arange(0, h, block)
    xs = np.arange(0, w, block)
    y_end = np.minimum(ys + block, h)
    x_end = np.minimum(xs + block, w)
    padded = np.zeros((h + 2 * search, w + 2 * search), dtype=np.int64)
    padded[search:search + h, search:search + w] = b

    shifts = _candidate_shifts(search)
    cost = np.empty((len(shifts), len(ys), len(xs)), dtype=np.float64)
    for n, (dx, dy) in enumerate(shifts):
        moved = padded[search + dy:search + dy + h, search + dx:search + dx + w]
        diff = np.abs(a - moved)
        sad = np.add.reduceat(np.add.reduceat(diff, ys, axis=0), xs, axis=1)
        valid_y = (ys + dy >= 0) & (y_end + dy <= h)
        valid_x = (xs + dx >= 0) & (x_end + dx <= w)
        cost[n] = np.where(valid_y[:, None] & valid_x[None, :], sad, np.inf)

    best = np.argmin(cost, axis=0)  # first minimum == preferred shift
    table = np.asarray(shifts, dtype=np.float64)
    block_u = table[best, 0]
    block_v = table[best, 1]
    rows = np.repeat(np.arange(len(ys)), np.diff(np.append(ys, h)))
    cols = np.repeat(np.arange(len(xs)), np.diff(np.append(xs, w)))
    flow = np.empty((2, h, w))
    flow[0] = block_u[np.ix_(rows, cols)]
    flow[1] = block_v[np.ix_(rows, cols)]
    return flow


def pixel_displacements(flow) -> np.ndarray:
    """|u| + |v| for every pixel, shape (height, width)."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError("flow must have shape (2, height, width)")
    return np.abs(flow[0]) + np.abs(flow[1])


def pixel_displacement(flow, k: int) -> float:
    s = pixel_displacements(flow).ravel()
    if not 0 <= k < s.size:
        raise IndexError(f"pixel index {k} outside field of {s.size} pixels")
    return float(s[k])


def frame_dynamicity(flow) -> float:
    s = pixel_displacements(flow)
    if s.size == 0:
        raise ValueError("empty flow field")
    return float(s.mean())


@dataclass
class DynamicityScore:
    per_frame: list[float]
    segment_value: float
    normalized: float | None = None


def segment_dynamicity(flows) -> DynamicityScore:
    flows = list(flows)
    if not flows:
        raise ValueError("a segment needs at least one flow field")
    per_frame = [frame_dynamicity(f) for f in flows]
    return DynamicityScore(per_frame, float(np.mean(per_frame)))


def normalize_dynamicity(values) -> np.ndarray:
    return minmax_normalize(values)


def motion_features(flows, hist_max: float = 8.0) -> np.ndarray:
    """34-dim motion descriptor: normalized histogram of |u|+|v| over the
    segment (32 bins on [0, hist_max], overflow into the last bin) followed
    by the mean and max displacement."""
    s = np.concatenate([pixel_displacements(f).ravel() for f in flows])
    bins = np.minimum((s / hist_max * MOTION_BINS).astype(np.int64), MOTION_BINS - 1)
    hist = np.bincount(bins, minlength=MOTION_BINS) / s.size
    return np.concatenate([hist, [s.mean(), s.max()]])
