"""Bag-of-visual-words index: histograms, tf-idf weighting, cosine search.

Each stored image becomes one l2-normalized weighted histogram over the
codebook's words.  Component m of image n is

    (1 + ln tf(m, n)) * ln(N / df(m))

with tf the word count in the image and df the number of stored images using
the word; components with tf = 0 or df = 0 are 0, and df = N makes the idf
factor vanish.  Queries are weighted with the stored index's N and df and
never perturb them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cipher import canonicalize_query
from .codebook import Codebook, assign_batch, codebook_hash
from .image_io import DatasetManifest, load_image
from .scd import ScdConfig, extract_patches

_MAGIC = b"ETCI1"
_COUNTS = struct.Struct("<QI")  # n entries, m words


def build_histogram(patch_descriptors, cb: Codebook) -> np.ndarray:
    """Word-count histogram of one image's patch descriptors: (m,) int64."""
    descs = np.asarray(patch_descriptors, dtype=np.float64)
    if descs.ndim != 2 or descs.shape[0] == 0:
        raise ValueError("need a non-empty (n_patches, dim) descriptor array")
    words = assign_batch(descs, cb)
    return np.bincount(words, minlength=cb.m).astype(np.int64)


def compute_df(histograms) -> np.ndarray:
    """df(m) = number of histograms with a nonzero count in component m."""
    hists = np.asarray(histograms)
    if hists.ndim != 2:
        raise ValueError("histograms must form a 2-D array")
    return (hists > 0).sum(axis=0).astype(np.int64)


def tfidf_raw(histogram, df, n: int) -> np.ndarray:
    """Unnormalized tf-idf weights; zero where tf = 0 or df = 0."""
    tf = np.asarray(histogram, dtype=np.float64)
    dfv = np.asarray(df, dtype=np.float64)
    if tf.shape != dfv.shape:
        raise ValueError(f"histogram shape {tf.shape} != df shape {dfv.shape}")
    if n < 1:
        raise ValueError("stored-image count must be >= 1")
    out = np.zeros_like(tf)
    active = (tf > 0) & (dfv > 0)
    out[active] = (1.0 + np.log(tf[active])) * np.log(n / dfv[active])
    return out


def l2_normalize(vec) -> np.ndarray:
    """Scale to unit l2 norm; the all-zero vector is returned unchanged."""
    arr = np.asarray(vec, dtype=np.float64)
    norm = np.sqrt((arr * arr).sum())
    if norm == 0.0:
        return arr.copy()
    return arr / norm


def tfidf_weight(histogram, df, n: int) -> np.ndarray:
    return l2_normalize(tfidf_raw(histogram, df, n))


@dataclass
class DescriptorIndex:
    """Searchable store of weighted descriptors with owner metadata.

    ``vectors`` rows are l2-normalized (or all-zero for degenerate images)
    and aligned with ``image_ids`` / ``owner_ids``.  The index remembers the
    codebook and descriptor configuration it was built with; queries must go
    through the same pair.
    """

    image_ids: list[str]
    owner_ids: list[str]
    vectors: np.ndarray  # (n, m) float64
    df: np.ndarray  # (m,) int64
    codebook: Codebook
    scd: ScdConfig

    def __post_init__(self):
        if not (len(self.image_ids) == len(self.owner_ids) == self.vectors.shape[0]):
            raise ValueError("index entry lists and vector rows disagree")
        if self.vectors.shape[1] != self.codebook.m or self.df.shape != (self.codebook.m,):
            raise ValueError("vector width and df length must equal codebook size")

    @property
    def n(self) -> int:
        return len(self.image_ids)


def build_index_from_images(
    image_ids, owner_ids, images, cb: Codebook, scd: ScdConfig = ScdConfig()
) -> DescriptorIndex:
    """Index already-loaded images (the in-memory core of :func:`build_index`)."""
    ids = list(image_ids)
    owners = list(owner_ids)
    if not ids:
        raise ValueError("empty dataset")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids")
    if not (len(ids) == len(owners) == len(images)):
        raise ValueError("image_ids, owner_ids, and images must align")
    histograms = np.stack(
        [build_histogram(extract_patches(img, scd), cb) for img in images]
    )
    df = compute_df(histograms)
    n = len(ids)
    vectors = np.stack([tfidf_weight(h, df, n) for h in histograms])
    return DescriptorIndex(
        image_ids=ids, owner_ids=owners, vectors=vectors, df=df, codebook=cb, scd=scd
    )


def build_index(
    manifest: DatasetManifest, cb: Codebook, scd: ScdConfig = ScdConfig()
) -> DescriptorIndex:
    """Load every manifest image and index it as stored (no canonicalization).

    Any per-image failure aborts the build; all failing ids are reported
    together so a bad batch surfaces in one pass.
    """
    if not manifest.entries:
        raise ValueError("empty dataset")
    images = []
    failures = []
    for entry in manifest.entries:
        try:
            images.append(load_image(entry.path))
        except (ValueError, FileNotFoundError) as exc:
            failures.append(f"{entry.image_id}: {exc}")
    if failures:
        raise ValueError(
            f"failed to load {len(failures)} image(s):\n" + "\n".join(failures)
        )
    return build_index_from_images(
        [e.image_id for e in manifest.entries],
        [e.owner_id for e in manifest.entries],
        images,
        cb,
        scd,
    )


def describe_image(img, index: DescriptorIndex) -> np.ndarray:
    """Weighted descriptor of ``img`` under the index's codebook, df, and N.

    This is the stored-image pipeline; it applies no canonicalization.
    """
    hist = build_histogram(extract_patches(img, index.scd), index.codebook)
    return tfidf_weight(hist, index.df, index.n)


def make_query_descriptor(img, index: DescriptorIndex) -> np.ndarray:
    """Canonicalize a query (parity NP flip), then run the stored pipeline.

    Identical for plain and encrypted queries; the server never needs to know
    which kind it received.
    """
    return describe_image(canonicalize_query(img), index)


def search(
    index: DescriptorIndex, query_vec, top_k: int
) -> list[tuple[str, str, float]]:
    """Ranked (image_id, owner_id, score) triples, best first.

    Score is the dot product of l2-normalized vectors (cosine similarity).
    Ties break by ascending image id; at most min(top_k, n) rows come back.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (index.codebook.m,):
        raise ValueError(f"query length {q.shape} != index width {index.codebook.m}")
    scores = index.vectors @ q
    order = np.lexsort((np.asarray(index.image_ids), -scores))
    return [
        (index.image_ids[i], index.owner_ids[i], float(scores[i]))
        for i in order[: min(top_k, index.n)]
    ]


def format_results(results) -> str:
    """Line-oriented ``rank,image_id,owner_id,score`` rendering of search output."""
    return "".join(
        f"{rank},{image_id},{owner_id},{score:.6f}\n"
        for rank, (image_id, owner_id, score) in enumerate(results, start=1)
    )


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for index file")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.raw):
            raise ValueError(f"corrupt index file {self.path}: truncated")
        chunk = self.raw[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def take_str(self) -> str:
        (length,) = struct.unpack("<H", self.take(2))
        return self.take(length).decode("utf-8")


def save_index(index: DescriptorIndex, path) -> None:
    """Binary dump: magic, codebook digest, N, M, df, then per-entry records."""
    parts = [
        _MAGIC,
        codebook_hash(index.codebook),
        _COUNTS.pack(index.n, index.codebook.m),
        np.ascontiguousarray(index.df, dtype="<i8").tobytes(),
    ]
    for image_id, owner_id, vec in zip(
        index.image_ids, index.owner_ids, index.vectors
    ):
        parts.append(_pack_str(image_id))
        parts.append(_pack_str(owner_id))
        parts.append(np.ascontiguousarray(vec, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _verify_df(vectors: np.ndarray, df: np.ndarray, n: int, path) -> None:
    # weighted components are nonzero exactly when tf > 0, unless df is 0 or n
    for m in range(df.shape[0]):
        column_nonzero = int(np.count_nonzero(vectors[:, m]))
        if df[m] == 0 or df[m] == n:
            consistent = column_nonzero == 0
        else:
            consistent = column_nonzero == df[m]
        if not consistent or not 0 <= df[m] <= n:
            raise ValueError(f"df inconsistent with stored descriptors: {path}")


def load_index(
    path, cb: Codebook, scd: ScdConfig = ScdConfig()
) -> DescriptorIndex:
    """Read an index written by :func:`save_index` and rebind its codebook.

    The stored digest must match ``cb`` and the df array must agree with the
    stored vectors, otherwise the file is rejected.
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(_MAGIC)) != _MAGIC:
        raise ValueError(f"not an index file: {path}")
    if reader.take(32) != codebook_hash(cb):
        raise ValueError(
            f"index {path} was built with a different codebook (hash mismatch)"
        )
    n, m = _COUNTS.unpack(reader.take(_COUNTS.size))
    if m != cb.m:
        raise ValueError(f"corrupt index file {path}: word count mismatch")
    df = np.frombuffer(reader.take(m * 8), dtype="<i8").astype(np.int64)
    image_ids, owner_ids, rows = [], [], []
    for _ in range(n):
        image_ids.append(reader.take_str())
        owner_ids.append(reader.take_str())
        rows.append(np.frombuffer(reader.take(m * 8), dtype="<f8").astype(np.float64))
    if reader.pos != len(reader.raw):
        raise ValueError(f"corrupt index file {path}: trailing bytes")
    vectors = np.stack(rows) if rows else np.zeros((0, m))
    _verify_df(vectors, df, n, path)
    return DescriptorIndex(
        image_ids=image_ids,
        owner_ids=owner_ids,
        vectors=vectors,
        df=df,
        codebook=cb,
        scd=scd,
    )
