"""Visual codebook: seeded k-means over patch descriptors, nearest-word assignment.

Training is plain Lloyd iteration with k-means++ seeding.  Everything is
deterministic given (descriptor order, size, config): initialization draws
from a seeded generator, updates sum points in a fixed order, and empty
clusters are re-seeded by a fixed rule, so two runs on the same inputs give
bit-identical codebooks.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"ETCB1"
_HEADER = struct.Struct("<IIQQ")  # m, dim, seed, trained_on


@dataclass(frozen=True)
class KMeansConfig:
    seed: int = 0
    max_iter: int = 100
    tol: float = 1e-4  # relative centroid movement threshold
    init: str = "k-means++"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.init != "k-means++":
            raise ValueError(f"unknown init scheme {self.init!r}")


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # (m, dim) float64
    seed: int
    trained_on: int  # descriptor count seen at training time

    def __post_init__(self):
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 2:
            raise ValueError("codebook needs at least 2 centroids")
        if not np.isfinite(self.centroids).all():
            raise ValueError("codebook centroids must be finite")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, m) squared Euclidean distances via the expanded product form."""
    d2 = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * (points @ centroids.T)
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeanspp_init(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((m, points.shape[1]), dtype=np.float64)
    idx = int(rng.integers(n))
    centroids[0] = points[idx]
    nearest = ((points - centroids[0]) ** 2).sum(axis=1)
    for k in range(1, m):
        total = nearest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=nearest / total))
        else:
            # all remaining points coincide with chosen centroids
            idx = int(rng.integers(n))
        centroids[k] = points[idx]
        nearest = np.minimum(nearest, ((points - points[idx]) ** 2).sum(axis=1))
    return centroids


def _cluster_means(
    points: np.ndarray, labels: np.ndarray, old_centroids: np.ndarray
) -> np.ndarray:
    m = old_centroids.shape[0]
    counts = np.bincount(labels, minlength=m)
    sums = np.zeros_like(old_centroids)
    np.add.at(sums, labels, points)
    means = old_centroids.copy()
    filled = counts > 0
    means[filled] = sums[filled] / counts[filled, None]

    taken: set[int] = set()
    for k in np.flatnonzero(~filled):
        # re-seed an empty cluster at the point farthest from its stale centroid
        dist = ((points - old_centroids[k]) ** 2).sum(axis=1)
        for idx in np.argsort(-dist, kind="stable"):
            if int(idx) not in taken:
                taken.add(int(idx))
                means[k] = points[idx]
                break
    return means


def train_codebook(
    descriptors,
    m: int,
    cfg: KMeansConfig = KMeansConfig(),
    history_out: list | None = None,
) -> Codebook:
    """Cluster descriptors into an m-word codebook.

    Runs Lloyd iterations from a k-means++ start until ``cfg.max_iter`` or
    until every centroid's relative movement drops below ``cfg.tol``.  When
    ``history_out`` is given, the assignment-step inertia of each iteration is
    appended to it (non-increasing by construction).
    """
    points = np.ascontiguousarray(descriptors, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("descriptors must form a 2-D array")
    if not np.isfinite(points).all():
        raise ValueError("descriptors must be finite")
    if m < 2:
        raise ValueError("codebook size must be >= 2")
    n = points.shape[0]
    if n < m:
        raise ValueError(f"need at least {m} descriptors to train, got {n}")

    rng = np.random.default_rng(cfg.seed)
    centroids = _kmeanspp_init(points, m, rng)
    for _ in range(cfg.max_iter):
        d2 = _squared_distances(points, centroids)
        labels = np.argmin(d2, axis=1)
        if history_out is not None:
            history_out.append(float(d2[np.arange(n), labels].sum()))
        new_centroids = _cluster_means(points, labels, centroids)
        shift = np.linalg.norm(new_centroids - centroids, axis=1)
        scale = np.maximum(np.linalg.norm(centroids, axis=1), 1e-12)
        centroids = new_centroids
        if (shift / scale).max() < cfg.tol:
            break
    return Codebook(centroids=centroids, seed=cfg.seed, trained_on=n)


def assign(desc, cb: Codebook) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    arr = np.asarray(desc, dtype=np.float64)
    if arr.shape != (cb.dim,):
        raise ValueError(f"descriptor length {arr.shape} != codebook dim {cb.dim}")
    return int(assign_batch(arr[None], cb)[0])


def assign_batch(descs, cb: Codebook, chunk: int = 256) -> np.ndarray:
    """Nearest-centroid index for each row of ``descs``.

    Distances are computed in the direct (x - c)^2 form, in chunks, so the
    result matches an element-by-element linear scan exactly, including the
    lowest-index tie rule.
    """
    arr = np.asarray(descs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != cb.dim:
        raise ValueError(f"descriptors must be (n, {cb.dim}), got {arr.shape}")
    out = np.empty(arr.shape[0], dtype=np.int64)
    for start in range(0, arr.shape[0], chunk):
        sub = arr[start : start + chunk]
        d2 = ((sub[:, None, :] - cb.centroids[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


def _serialize(cb: Codebook) -> bytes:
    header = _MAGIC + _HEADER.pack(cb.m, cb.dim, cb.seed, cb.trained_on)
    return header + np.ascontiguousarray(cb.centroids, dtype="<f8").tobytes()


def codebook_hash(cb: Codebook) -> bytes:
    """sha256 digest of the serialized codebook; identifies it in index files."""
    return hashlib.sha256(_serialize(cb)).digest()


def save_codebook(cb: Codebook, path) -> None:
    Path(path).write_bytes(_serialize(cb))


def load_codebook(path) -> Codebook:
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + _HEADER.size or raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"not a codebook file: {path}")
    m, dim, seed, trained_on = _HEADER.unpack_from(raw, len(_MAGIC))
    body = raw[len(_MAGIC) + _HEADER.size :]
    expected = m * dim * 8
    if len(body) != expected:
        raise ValueError(f"corrupt codebook file {path}: truncated centroid data")
    centroids = np.frombuffer(body, dtype="<f8").reshape(m, dim).astype(np.float64)
    return Codebook(centroids=centroids, seed=seed, trained_on=trained_on)
