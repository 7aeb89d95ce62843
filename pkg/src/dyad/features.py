"""Segment appearance features and PCA via a cyclic Jacobi eigensolver."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ingest import FormatError, _read_bytes, _write_atomic

HIST_BINS = 32
PCA_MAGIC = b"PCA1"


def extract_handcrafted(frames) -> np.ndarray:
    """Return the 64-dim appearance descriptor of one segment.

    The first 32 entries are the per-frame normalized intensity histogram
    averaged over frames; the last 32 are the normalized histogram of
    absolute differences between consecutive frames. Bins are 8 grey
    levels wide.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError("empty segment")
    if frames.shape[0] < 2:
        raise ValueError("segment needs at least two frames")
    frames = frames.astype(np.int16)
    pixels = frames.shape[1] * frames.shape[2]

    intensity = np.zeros(HIST_BINS)
    for frame in frames:
        intensity += np.bincount((frame >> 3).ravel(), minlength=HIST_BINS) / pixels
    intensity /= frames.shape[0]

    diffs = np.abs(np.diff(frames, axis=0))
    motion = np.bincount((diffs >> 3).ravel(), minlength=HIST_BINS).astype(np.float64)
    motion /= motion.sum()
    return np.concatenate([intensity, motion])


def jacobi_eigh(matrix, tol: float = 1e-10, max_sweeps: int = 64):
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol`` times the Frobenius norm of the input. Returns
    ``(eigenvalues, eigenvectors)`` with eigenvectors in columns, in the
    order the diagonal ends up in (unsorted).
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    a = (a + a.T) / 2
    n = a.shape[0]
    v = np.eye(n)
    fro = np.linalg.norm(a)
    if fro == 0.0:
        return np.zeros(n), v

    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off < tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                gap = a[q, q] - a[p, p]
                if abs(apq) < 1e-300 * max(abs(gap), 1.0) or abs(gap) > 1e150 * abs(apq):
                    # rotation angle underflows; the entry is already negligible
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = gap / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi eigensolver did not converge")
    return np.diag(a).copy(), v


def _canonical_sign(vec: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(vec) > 1e-12)
    if nz.size and vec[nz[0]] < 0:
        return -vec
    return vec


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    eigenvalues: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def transform(self, x) -> np.ndarray:
        return pca_transform(self, x)


def pca_fit(features, k: int) -> PcaModel:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("pca_fit needs at least two samples")
    d = x.shape[1]
    if k < 1 or k > d:
        raise ValueError(f"cannot retain {k} components from {d}-dim data")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    values, vectors = jacobi_eigh(cov)
    order = np.argsort(-values, kind="stable")[:k]
    components = np.array([_canonical_sign(vectors[:, j]) for j in order])
    return PcaModel(mean, components, values[order])


def pca_transform(model: PcaModel, x) -> np.ndarray:
    """Project one vector (d,) or a batch (n, d) onto the retained components."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f"expected dim {model.dim}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def encode_pca(model: PcaModel) -> bytes:
    head = PCA_MAGIC + struct.pack("<2I", model.dim, model.k)
    return head + model.mean.astype("<f4").tobytes() + model.components.astype("<f4").tobytes()


def decode_pca(data: bytes) -> PcaModel:
    if len(data) < 12 or data[:4] != PCA_MAGIC:
        raise FormatError("malformed PCA1 header")
    d, k = struct.unpack_from("<2I", data, 4)
    if len(data) != 12 + 4 * d * (k + 1):
        raise FormatError("PCA1 payload size mismatch")
    mean = np.frombuffer(data, "<f4", d, 12).astype(np.float64)
    comps = np.frombuffer(data, "<f4", k * d, 12 + 4 * d).reshape(k, d).astype(np.float64)
    return PcaModel(mean, comps)


def save_pca(path, model: PcaModel) -> None:
    _write_atomic(path, encode_pca(model))


def load_pca(path) -> PcaModel:
    return decode_pca(_read_bytes(path))
