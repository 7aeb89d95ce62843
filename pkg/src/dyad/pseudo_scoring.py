"""Unsupervised outlier scorers used to seed the pseudo anomaly score.

Isolation forest and a minimum-enclosing-ball hypersphere are the default
pair; local outlier factor and PCA reconstruction error are drop-in
alternatives to the hypersphere.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numba
import numpy as np

from .features import PcaModel
from .ingest import FormatError, _read_bytes, _write_atomic
from .rng import SplitMix64, derive_seed

EULER_GAMMA = 0.5772156649
PSM_MAGIC = b"PSM1"
TAG_IFOREST = 1
TAG_SPHERE = 2


def minmax_normalize(values) -> np.ndarray:
    """Rescale to [0, 1] over the batch; a constant batch maps to 0.5."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalize an empty batch")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def average_path_length(n: int) -> float:
    """Expected path length of an unsuccessful BST search over n items.

    Uses ln(i) + 0.5772156649 for the harmonic number H(i); g(1)=0, g(2)=1.
    """
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


# ---------------------------------------------------------------------------
# isolation forest


@dataclass(frozen=True)
class IsolationTree:
    """Flat node arrays; node 0 is the root. Leaves have feature == -1."""

    feature: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    height_limit: int

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(i, d):
            if self.feature[i] < 0:
                return d
            return max(walk(self.left[i], d + 1), walk(self.right[i], d + 1))

        return walk(0, 0)

    def leaf_of(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (leaf depth, leaf size) for every row of x."""
        node = np.zeros(len(x), dtype=np.int64)
        depth = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            idx = rows[active]
            n = node[active]
            go_left = x[idx, feat[active]] < self.split[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            depth[idx] += 1
        return depth, self.size[node]

    def path_length(self, x: np.ndarray) -> np.ndarray:
        depth, size = self.leaf_of(x)
        return depth + np.array([average_path_length(int(s)) for s in size])


@dataclass(frozen=True)
class IsolationForest:
    trees: tuple[IsolationTree, ...]
    subsample_size: int
    dim: int

    def expected_path_length(self, x) -> np.ndarray:
        x = _as_batch(x, self.dim)
        return np.mean([t.path_length(x) for t in self.trees], axis=0)

    def score(self, x) -> np.ndarray:
        return iforest_score(self, x)


def _as_batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {x.shape[1]}")
    return x


def _build_tree(x: np.ndarray, rng: SplitMix64, height_limit: int) -> IsolationTree:
    feature, split, left, right, size = [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        split.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(rows))
        if depth >= height_limit or len(rows) <= 1:
            return node
        sub = x[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        candidates = np.flatnonzero(hi > lo)
        if candidates.size == 0:
            return node
        f = int(candidates[rng.below(candidates.size)])
        while True:
            u = rng.uniform()
            value = lo[f] + u * (hi[f] - lo[f])
            if lo[f] < value <= hi[f]:
                break
        mask = sub[:, f] < value
        feature[node] = f
        split[node] = value
        left[node] = grow(rows[mask], depth + 1)
        right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(np.arange(len(x)), 0)
    return IsolationTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(split, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(size, dtype=np.int64),
        height_limit,
    )


def draw_subsample(rng: SplitMix64, n: int, m: int) -> np.ndarray:
    """First m entries of a partial Fisher-Yates shuffle of range(n)."""
    perm = list(range(n))
    for j in range(m):
        r = j + rng.below(n - j)
        perm[j], perm[r] = perm[r], perm[j]
    return np.asarray(perm[:m], dtype=np.int64)


def iforest_fit(features, n_trees: int = 100, subsample: int = 256, seed: int = 0) -> IsolationForest:
    """Fit an isolation forest.

    Tree ``i`` draws from its own SplitMix64 stream seeded with
    ``derive_seed(seed, i)``: first the subsample (without replacement,
    capped at the dataset size), then, per node in pre-order, a feature
    index among the node's non-constant features and a split value
    uniform in (min, max].
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("iforest_fit needs at least two samples")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    m = min(subsample, x.shape[0])
    if m < 2:
        raise ValueError("subsample size must be >= 2")
    height_limit = math.ceil(math.log2(m))
    trees = []
    for i in range(n_trees):
        rng = SplitMix64(derive_seed(seed, i))
        rows = draw_subsample(rng, x.shape[0], m)
        trees.append(_build_tree(x[rows], rng, height_limit))
    return IsolationForest(tuple(trees), m, x.shape[1])


def iforest_score(forest: IsolationForest, x) -> np.ndarray:
    """2 ** (-E[h(x)] / g(subsample)); higher means easier to isolate."""
    e = forest.expected_path_length(x)
    return np.power(2.0, -e / average_path_length(forest.subsample_size))


# ---------------------------------------------------------------------------
# minimum enclosing ball


@dataclass(frozen=True)
class Hypersphere:
    center: np.ndarray
    radius: float

    @property
    def dim(self) -> int:
        return self.center.shape[0]


@numba.njit(cache=True)
def _badoiu_clarkson(points, rounds):
    n, d = points.shape
    c = points[0].copy()
    for t in range(1, rounds + 1):
        best = -1.0
        far = 0
        for i in range(n):
            acc = 0.0
            for j in range(d):
                diff = points[i, j] - c[j]
                acc += diff * diff
            if acc > best:
                best = acc
                far = i
        step = 1.0 / (t + 1)
        for j in range(d):
            c[j] += (points[far, j] - c[j]) * step
    return c


def meb_fit(features, epsilon: float = 1e-3) -> Hypersphere:
    """Approximate minimum enclosing ball by core-set iteration.

    Starts at the first point and runs ceil(1/epsilon**2) rounds, each
    moving the center 1/(t+1) of the way toward the current farthest
    point. The radius reported is the exact max distance from the final
    center, which is within (1 + epsilon) of the optimum.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("meb_fit needs at least one point")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    rounds = math.ceil(1.0 / (epsilon * epsilon) - 1e-9)
    center = _badoiu_clarkson(x, rounds)
    radius = float(np.sqrt(((x - center) ** 2).sum(axis=1)).max())
    return Hypersphere(center, radius)


def ocsvm_score(sphere: Hypersphere, x, calibration: float | None = None) -> np.ndarray:
    """Distance from the center over the max training distance, capped at 1."""
    if calibration is None:
        calibration = sphere.radius
    if calibration <= 0:
        raise ValueError("calibration distance must be positive")
    x = _as_batch(x, sphere.dim)
    dist = np.sqrt(((x - sphere.center) ** 2).sum(axis=1))
    return np.minimum(1.0, dist / calibration)


# ---------------------------------------------------------------------------
# local outlier factor

_LRD_EPS = 1e-10


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def _knn(dist: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps the lower index first among equal distances
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


class LocalOutlierFactor:
    """Exact LOF over a reference set.

    A mean reachability distance of zero (exact duplicates) is offset by
    1e-10 so equal-density duplicates score exactly 1.
    """

    def __init__(self, features, k_neighbors: int = 20):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] <= k_neighbors:
            raise ValueError(f"LOF with k={k_neighbors} needs more than {k_neighbors} samples")
        if k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        self.x = x
        self.k = k_neighbors
        dist = _pairwise(x, x)
        np.fill_diagonal(dist, np.inf)
        self.neighbors = _knn(dist, k_neighbors)
        rows = np.arange(len(x))[:, None]
        self.k_distance = dist[rows, self.neighbors][:, -1]
        reach = np.maximum(self.k_distance[self.neighbors], dist[rows, self.neighbors])
        self.lrd = 1.0 / (reach.mean(axis=1) + _LRD_EPS)

    def training_scores(self) -> np.ndarray:
        return self.lrd[self.neighbors].mean(axis=1) / self.lrd

    def score(self, query) -> np.ndarray:
        q = _as_batch(query, self.x.shape[1])
        dist = _pairwise(q, self.x)
        nb = _knn(dist, self.k)
        rows = np.arange(len(q))[:, None]
        reach = np.maximum(self.k_distance[nb], dist[rows, nb])
        lrd = 1.0 / (reach.mean(axis=1) + _LRD_EPS)
        return self.lrd[nb].mean(axis=1) / lrd


def lof_score(features, query, k_neighbors: int = 20) -> np.ndarray:
    return LocalOutlierFactor(features, k_neighbors).score(query)


# ---------------------------------------------------------------------------
# PCA reconstruction error


def pca_recon_score(model: PcaModel, x) -> np.ndarray:
    """Squared norm of the part of (x - mean) outside the retained subspace."""
    x = _as_batch(x, model.dim)
    centered = x - model.mean
    residual = centered - (centered @ model.components.T) @ model.components
    return (residual * residual).sum(axis=1)


def combine_scores(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("score lists differ in length")
    if a.size == 0:
        raise ValueError("empty score lists")
    return (minmax_normalize(a) + minmax_normalize(b)) / 2.0


# ---------------------------------------------------------------------------
# persistence


def encode_forest(forest: IsolationForest) -> bytes:
    out = [PSM_MAGIC, bytes([TAG_IFOREST])]
    out.append(struct.pack("<4I", len(forest.trees), forest.subsample_size, forest.dim,
                           forest.trees[0].height_limit))
    for tree in forest.trees:
        out.append(struct.pack("<I", tree.node_count))
        for i in range(tree.node_count):
            out.append(struct.pack("<idiiI", int(tree.feature[i]), float(tree.split[i]),
                                   int(tree.left[i]), int(tree.right[i]), int(tree.size[i])))
    return b"".join(out)


def encode_sphere(sphere: Hypersphere) -> bytes:
    return (PSM_MAGIC + bytes([TAG_SPHERE]) + struct.pack("<I", sphere.dim)
            + sphere.center.astype("<f8").tobytes() + struct.pack("<d", sphere.radius))


def decode_scorer(data: bytes):
    if len(data) < 5 or data[:4] != PSM_MAGIC:
        raise FormatError("malformed PSM1 header")
    tag = data[4]
    try:
        if tag == TAG_IFOREST:
            n_trees, sub, dim, limit = struct.unpack_from("<4I", data, 5)
            off = 21
            trees = []
            node_fmt = struct.Struct("<idiiI")
            for _ in range(n_trees):
                (count,) = struct.unpack_from("<I", data, off)
                off += 4
                rows = [node_fmt.unpack_from(data, off + j * node_fmt.size) for j in range(count)]
                off += count * node_fmt.size
                cols = list(zip(*rows))
                trees.append(IsolationTree(
                    np.asarray(cols[0], dtype=np.int64), np.asarray(cols[1], dtype=np.float64),
                    np.asarray(cols[2], dtype=np.int64), np.asarray(cols[3], dtype=np.int64),
                    np.asarray(cols[4], dtype=np.int64), limit))
            if off != len(data):
                raise FormatError("trailing bytes in PSM1 forest")
            return IsolationForest(tuple(trees), sub, dim)
        if tag == TAG_SPHERE:
            (dim,) = struct.unpack_from("<I", data, 5)
            if len(data) != 9 + 8 * dim + 8:
                raise FormatError("PSM1 sphere payload size mismatch")
            center = np.frombuffer(data, "<f8", dim, 9).astype(np.float64)
            (radius,) = struct.unpack_from("<d", data, 9 + 8 * dim)
            return Hypersphere(center, radius)
    except struct.error as exc:
        raise FormatError(f"truncated PSM1 payload: {exc}") from exc
    raise FormatError(f"unknown PSM1 scorer tag {tag}")


def save_scorer(path, model) -> None:
    if isinstance(model, IsolationForest):
        payload = encode_forest(model)
    elif isinstance(model, Hypersphere):
        payload = encode_sphere(model)
    else:
        raise TypeError(f"cannot persist {type(model).__name__}")
    _write_atomic(path, payload)


def load_scorer(path):
    return decode_scorer(_read_bytes(path))
