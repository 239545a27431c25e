"""Retrieval benchmarking: average precision, condition runs, codebook sweeps.

A condition names what sits on each side of the search: stored images may be
kept plain or encrypted per image, and queries may be plain, plain with the
parity canonicalization, or encrypted.  All randomness inside one run (every
per-image keyset, every user keyset, the k-means seed) expands
deterministically from the single run seed, so runs replay bit-exactly.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cipher import KeySet, SplitMix64, encrypt
from .codebook import KMeansConfig, train_codebook
from .image_io import DatasetManifest, load_image
from .index import (
    build_index_from_images,
    describe_image,
    make_query_descriptor,
    search,
)
from .scd import ScdConfig, extract_patches

logger = logging.getLogger(__name__)

UKBENCH_GROUP_SIZE = 4


class EvalCondition(Enum):
    """Stored-side / query-side pairing under evaluation."""

    PLAIN_VS_PLAIN = "plain_vs_plain"
    ETC_VS_PLAIN = "etc_vs_plain"
    ETC_VS_PLAIN_NP = "etc_vs_plain_np"
    ETC_VS_ETC = "etc_vs_etc"

    @classmethod
    def parse(cls, name: str) -> "EvalCondition":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown condition {name!r}; expected one of {valid}")


@dataclass
class GroundTruth:
    """Image id -> group id; relevance means sharing the query's group."""

    groups: dict[str, str]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "GroundTruth":
        gt = cls({e.image_id: e.group_id for e in manifest.entries})
        if manifest.mode == "ukbench":
            sizes: dict[str, int] = {}
            for group in gt.groups.values():
                sizes[group] = sizes.get(group, 0) + 1
            bad = {g: c for g, c in sizes.items() if c != UKBENCH_GROUP_SIZE}
            if bad:
                raise ValueError(
                    f"ukbench mode requires groups of exactly {UKBENCH_GROUP_SIZE}, "
                    f"violated by: {bad}"
                )
        return gt

    def relevant(self, query_id: str, stored_ids) -> set[str]:
        if query_id not in self.groups:
            raise ValueError(f"query id {query_id!r} missing from ground truth")
        group = self.groups[query_id]
        return {i for i in stored_ids if self.groups.get(i) == group}


def load_ground_truth(path) -> GroundTruth:
    """Read a JSON object mapping image id to group id."""
    with open(path) as fh:
        groups = json.load(fh)
    if not isinstance(groups, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in groups.items()
    ):
        raise ValueError(f"ground truth {path} must map image ids to group ids")
    return GroundTruth(groups=groups)


def average_precision(ranked_ids, relevant) -> float:
    """AP = mean over relevant hits of (hits so far / rank), 1-based ranks."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    hits = 0
    total = 0.0
    for rank, image_id in enumerate(ranked_ids, start=1):
        if image_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


@dataclass
class EvalReport:
    condition: EvalCondition
    m: int
    seed: int
    average_precisions: list[float]
    map_score: float
    elapsed_seconds: float


def default_queries(manifest: DatasetManifest) -> list[str]:
    """The first image of each group, in order of group appearance."""
    seen = set()
    queries = []
    for entry in manifest.entries:
        if entry.group_id not in seen:
            seen.add(entry.group_id)
            queries.append(entry.image_id)
    return queries


def _next_keyset(stream: SplitMix64) -> KeySet:
    return KeySet(stream.next_u64(), stream.next_u64(), stream.next_u64())


def run_condition(
    manifest: DatasetManifest,
    gt: GroundTruth,
    condition: EvalCondition,
    m: int,
    seed: int,
    scd: ScdConfig = ScdConfig(),
    max_iter: int = 100,
    tol: float = 1e-4,
    image_cache: dict | None = None,
) -> EvalReport:
    """Index the dataset under ``condition`` and score every default query.

    Stored side: plain images for PLAIN_VS_PLAIN, otherwise every stored
    image is encrypted with its own keyset drawn from the seed stream, and
    the codebook is always trained on the stored (possibly encrypted) images.
    Query side: ETC_VS_ETC encrypts each query with a fresh user keyset drawn
    from the same stream; the two *_NP/_ETC conditions canonicalize queries,
    the two baselines do not.  A query's own stored copy counts as relevant.
    """
    if not manifest.entries:
        raise ValueError("empty dataset")
    if m < 2:
        raise ValueError("codebook size must be >= 2")
    start = time.perf_counter()

    if image_cache is None:
        image_cache = {}
    plain = {}
    for entry in manifest.entries:
        if entry.image_id not in image_cache:
            image_cache[entry.image_id] = load_image(entry.path)
        plain[entry.image_id] = image_cache[entry.image_id]

    key_stream = SplitMix64(seed)
    ids = manifest.image_ids
    if condition is EvalCondition.PLAIN_VS_PLAIN:
        stored = plain
    else:
        stored = {i: encrypt(plain[i], _next_keyset(key_stream)) for i in ids}

    training = np.concatenate([extract_patches(stored[i], scd) for i in ids])
    cb = train_codebook(
        training, m, KMeansConfig(seed=seed, max_iter=max_iter, tol=tol)
    )
    index = build_index_from_images(
        ids, [e.owner_id for e in manifest.entries], [stored[i] for i in ids], cb, scd
    )

    stored_ids = set(ids)
    aps = []
    for query_id in default_queries(manifest):
        query_img = plain[query_id]
        if condition is EvalCondition.ETC_VS_ETC:
            query_img = encrypt(query_img, _next_keyset(key_stream))
        if condition in (EvalCondition.ETC_VS_PLAIN_NP, EvalCondition.ETC_VS_ETC):
            descriptor = make_query_descriptor(query_img, index)
        else:
            descriptor = describe_image(query_img, index)
        ranked = search(index, descriptor, top_k=index.n)
        aps.append(
            average_precision(
                [image_id for image_id, _, _ in ranked],
                gt.relevant(query_id, stored_ids),
            )
        )

    report = EvalReport(
        condition=condition,
        m=m,
        seed=seed,
        average_precisions=aps,
        # fsum: the mean must not depend on query processing order
        map_score=math.fsum(aps) / len(aps),
        elapsed_seconds=time.perf_counter() - start,
    )
    logger.info(
        "condition=%s M=%d seed=%d mAP=%.4f (%.1fs)",
        condition.value,
        m,
        seed,
        report.map_score,
        report.elapsed_seconds,
    )
    return report


def sweep(
    manifest: DatasetManifest,
    gt: GroundTruth,
    conditions,
    m_values,
    seeds,
    scd: ScdConfig = ScdConfig(),
    max_iter: int = 100,
    tol: float = 1e-4,
) -> list[EvalReport]:
    """Cross product of conditions x codebook sizes x seeds, in that order."""
    conditions = list(conditions)
    m_values = list(m_values)
    seeds = list(seeds)
    if not conditions or not m_values or not seeds:
        raise ValueError("conditions, m_values, and seeds must be non-empty")
    unique_ms = list(dict.fromkeys(m_values))
    if len(unique_ms) != len(m_values):
        logger.warning("duplicate codebook sizes removed from sweep: %s", m_values)
    cache: dict = {}
    return [
        run_condition(
            manifest, gt, condition, m, seed,
            scd=scd, max_iter=max_iter, tol=tol, image_cache=cache,
        )
        for condition in conditions
        for m in unique_ms
        for seed in seeds
    ]


def sweep_table(reports) -> str:
    """Plot-ready CSV: one ``condition,M,seed,mAP`` row per report."""
    lines = ["condition,M,seed,mAP"]
    lines.extend(
        f"{r.condition.value},{r.m},{r.seed},{r.map_score:.6f}" for r in reports
    )
    return "\n".join(lines) + "\n"
