"""Frame-level evaluation: spline upsampling of segment scores, ROC/AUC, false-alarm rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Thomas algorithm. ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = len(diag)
    c = np.zeros(n)
    d = np.zeros(n)
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / denom if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom
    out = np.empty(n)
    out[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return out


class NaturalCubicSpline:
    """Interpolating cubic with zero second derivative at both end knots.

    Outside [x[0], x[-1]] the end values are held constant.
    """

    def __init__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("knots and values must be 1-D of equal length")
        if len(x) < 2:
            raise ValueError("a spline needs at least two knots")
        h = np.diff(x)
        if np.any(h <= 0):
            raise ValueError("knots must be strictly increasing")
        self.x, self.y, self.h = x, y, h
        m = np.zeros(len(x))
        if len(x) > 2:
            slopes = np.diff(y) / h
            rhs = 6.0 * np.diff(slopes)
            diag = 2.0 * (h[:-1] + h[1:])
            m[1:-1] = solve_tridiagonal(h[:-1], diag, h[1:], rhs)
        self.m = m

    def __call__(self, t) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=np.float64), self.x[0], self.x[-1])
        i = np.clip(np.searchsorted(self.x, t, side="right") - 1, 0, len(self.x) - 2)
        x0, x1, h = self.x[i], self.x[i + 1], self.h[i]
        m0, m1, y0, y1 = self.m[i], self.m[i + 1], self.y[i], self.y[i + 1]
        a, b = x1 - t, t - x0
        return (m0 * a ** 3 + m1 * b ** 3) / (6.0 * h) + (y0 / h - m0 * h / 6.0) * a + (y1 / h - m1 * h / 6.0) * b


def interpolate_to_frames(segment_scores, segment_views) -> np.ndarray:
    """Per-frame scores from a spline through segment centers, clamped to [0, 1]."""
    scores = np.asarray(segment_scores, dtype=np.float64)
    views = list(segment_views)
    if len(scores) != len(views):
        raise ValueError("one score per segment required")
    if not views:
        raise ValueError("no segments")
    frames = np.arange(views[-1].end, dtype=np.float64)
    if len(views) < 2:
        out = np.full(frames.shape, scores[0])
    else:
        spline = NaturalCubicSpline([v.center for v in views], scores)
        out = spline(frames)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # threshold for points[1:], descending
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC by sweeping every distinct score, highest first; equal scores
    enter together as one diagonal step. AUC by the trapezoid rule."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = int((y == 1).sum())
    neg = int((y == 0).sum())
    if pos == 0 or neg == 0 or pos + neg != len(y):
        raise ValueError("ROC needs both classes present and labels in {0, 1}")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[last_of_group]
    fp = (last_of_group + 1) - tp
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, s[last_of_group], auc)


def false_alarm_rate(scores, labels, tau: float = 0.5) -> float:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    normal = y == 0
    if not normal.any():
        raise ValueError("no normal frames to raise false alarms on")
    return float(np.mean(s[normal] > tau))
