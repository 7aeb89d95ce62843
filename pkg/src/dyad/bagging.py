"""Threshold labeling of (anomaly, dynamicity) score pairs into bags A / N."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class PseudoScore:
    segment_id: str
    y_s_hat: float
    y_d_hat: float


@dataclass(frozen=True)
class Bags:
    positive: frozenset
    negative: frozenset

    def __post_init__(self):
        if self.positive & self.negative:
            raise ValueError("bags overlap")

    @property
    def members(self) -> frozenset:
        return self.positive | self.negative

    def label(self, segment_id) -> int:
        if segment_id in self.positive:
            return 1
        if segment_id in self.negative:
            return 0
        raise KeyError(segment_id)


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name}={value} outside [0, 1]")


def assign_label(y_s_hat: float, y_d_hat: float, tau: float = 0.5) -> int:
    """1 iff both scores strictly exceed tau."""
    _check_unit("y_s_hat", y_s_hat)
    _check_unit("y_d_hat", y_d_hat)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau={tau} outside (0, 1)")
    return int(y_s_hat > tau and y_d_hat > tau)


def form_bags(scores, tau: float = 0.5) -> Bags:
    positive, negative = set(), set()
    for s in scores:
        if s.segment_id in positive or s.segment_id in negative:
            raise ValueError(f"duplicate segment id {s.segment_id!r}")
        (positive if assign_label(s.y_s_hat, s.y_d_hat, tau) else negative).add(s.segment_id)
    if not positive and not negative:
        raise ValueError("no scores to bag")
    return Bags(frozenset(positive), frozenset(negative))


def remap_bags(old: Bags, new_scores, tau: float = 0.5) -> Bags:
    """Rebuild the bags from fresh scores alone; old membership is discarded."""
    new_scores = list(new_scores)
    ids = {s.segment_id for s in new_scores}
    if ids != old.members or len(ids) != len(new_scores):
        raise ValueError("new scores do not cover exactly the bagged segments")
    return form_bags(new_scores, tau)


def write_bags_csv(path, bags: Bags, order=None) -> None:
    order = sorted(bags.members) if order is None else list(order)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["segment_id", "bag"])
        for sid in order:
            writer.writerow([sid, "A" if sid in bags.positive else "N"])


def read_bags_csv(path) -> Bags:
    positive, negative = set(), set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["bag"] == "A":
                positive.add(row["segment_id"])
            elif row["bag"] == "N":
                negative.add(row["segment_id"])
            else:
                raise ValueError(f"bad bag value {row['bag']!r}")
    return Bags(frozenset(positive), frozenset(negative))
