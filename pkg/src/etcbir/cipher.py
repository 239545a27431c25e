"""Keyed block-wise image encryption and the parity-based query canonicalization.

Encryption splits an image into 16x16 blocks and applies, in order: a keyed
block permutation, a keyed per-block square symmetry (rotation / mirror), and
a keyed per-block negative-positive flip (p -> 255 - p).  Each of the three
64-bit seeds drives exactly one stage, so stages can be studied in isolation
and decryption inverts them in reverse order, bit-exactly.

All per-block randomness is expanded from the seeds with splitmix64, which is
trivial to re-implement in any language; same (keys, block count) always
yields the same streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image_io import BlockGrid, assemble_blocks, split_blocks

_MASK64 = (1 << 64) - 1

# Inverse of each square-symmetry code: rotations invert pairwise, the four
# mirror-then-rotate elements are involutions.
INVERSE_D4 = np.array([0, 3, 2, 1, 4, 5, 6, 7], dtype=np.uint8)


class SplitMix64:
    """splitmix64 sequence over a 64-bit state; standard constants."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, bound: int) -> int:
        # modulo bias is < bound / 2**64, irrelevant at the bounds used here
        return self.next_u64() % bound


@dataclass(frozen=True)
class KeySet:
    """Three independent 64-bit seeds: permutation, rotation/mirror, NP flip."""

    k_perm: int
    k_rot: int
    k_np: int

    def __post_init__(self):
        for name in ("k_perm", "k_rot", "k_np"):
            value = getattr(self, name)
            if not (0 <= value <= _MASK64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class CipherStreams:
    """Per-block randomness expanded from a KeySet for one image size."""

    permutation: np.ndarray  # (n,) int64, bijection on block indices
    d4_codes: np.ndarray  # (n,) uint8 in [0, 8)
    np_bits: np.ndarray  # (n,) uint8 in {0, 1}


def derive_streams(keys: KeySet, n_blocks: int) -> CipherStreams:
    """Expand a key set into the three per-block streams for ``n_blocks``.

    The permutation is a Fisher-Yates shuffle driven by the k_perm stream;
    symmetry codes are uniform in [0, 8) from the k_rot stream; flip bits are
    fair coin flips from the k_np stream.  The streams are key-separated:
    changing one seed leaves the other two streams untouched.
    """
    if n_blocks < 1:
        raise ValueError("empty image: need at least one block")

    rng = SplitMix64(keys.k_perm)
    perm = np.arange(n_blocks, dtype=np.int64)
    for i in range(n_blocks - 1, 0, -1):
        j = rng.next_below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]

    rng = SplitMix64(keys.k_rot)
    codes = np.array([rng.next_below(8) for _ in range(n_blocks)], dtype=np.uint8)

    rng = SplitMix64(keys.k_np)
    bits = np.array([rng.next_below(2) for _ in range(n_blocks)], dtype=np.uint8)

    return CipherStreams(permutation=perm, d4_codes=codes, np_bits=bits)


def _check_stream_length(grid: BlockGrid, stream: np.ndarray, what: str) -> None:
    if stream.shape != (grid.n_blocks,):
        raise ValueError(
            f"{what} length {stream.shape} does not match block count {grid.n_blocks}"
        )


def permute_blocks(grid: BlockGrid, permutation: np.ndarray) -> BlockGrid:
    """Move input block j to output position permutation[j]."""
    perm = np.asarray(permutation, dtype=np.int64)
    _check_stream_length(grid, perm, "permutation")
    if not np.array_equal(np.sort(perm), np.arange(grid.n_blocks)):
        raise ValueError("permutation is not a bijection on block indices")
    out = np.empty_like(grid.blocks)
    out[perm] = grid.blocks
    return grid.replace_blocks(out)


def invert_permutation(permutation: np.ndarray) -> np.ndarray:
    return np.argsort(np.asarray(permutation, dtype=np.int64))


def transform_blocks(grid: BlockGrid, d4_codes: np.ndarray) -> BlockGrid:
    """Apply a square symmetry to each block, selected by its code.

    Codes 0-3 rotate counter-clockwise by 0/90/180/270 degrees; codes 4-7
    mirror left-right first and then rotate by the same steps.  Code 0 is the
    identity; INVERSE_D4 maps every code to its inverse.
    """
    codes = np.asarray(d4_codes)
    _check_stream_length(grid, codes, "d4 codes")
    if codes.min() < 0 or codes.max() > 7:
        raise ValueError("d4 codes must lie in [0, 8)")
    out = np.empty_like(grid.blocks)
    for code in range(8):
        sel = codes == code
        if not sel.any():
            continue
        sub = grid.blocks[sel]
        if code >= 4:
            sub = sub[:, :, ::-1, :]
        sub = np.rot90(sub, code % 4, axes=(1, 2))
        out[sel] = sub
    return grid.replace_blocks(out)


def np_transform(grid: BlockGrid, np_bits: np.ndarray) -> BlockGrid:
    """Negate every channel of block j (p -> 255 - p) where bit j is 1."""
    bits = np.asarray(np_bits)
    _check_stream_length(grid, bits, "np bits")
    flip = bits.astype(bool)[:, None, None, None]
    out = np.where(flip, 255 - grid.blocks, grid.blocks)
    return grid.replace_blocks(out)


def encrypt(img: np.ndarray, keys: KeySet) -> np.ndarray:
    """Encrypt a 16-divisible RGB image with ``keys``.

    Stage order is permutation, then per-block symmetry, then the NP flip;
    the symmetry and flip streams are indexed by the block's position after
    permutation, which keeps serialized ciphertexts stable.
    """
    grid = split_blocks(img)
    streams = derive_streams(keys, grid.n_blocks)
    grid = permute_blocks(grid, streams.permutation)
    grid = transform_blocks(grid, streams.d4_codes)
    grid = np_transform(grid, streams.np_bits)
    return assemble_blocks(grid)


def decrypt(img: np.ndarray, keys: KeySet) -> np.ndarray:
    """Invert :func:`encrypt`; wrong keys silently yield a valid garbage image."""
    grid = split_blocks(img)
    streams = derive_streams(keys, grid.n_blocks)
    grid = np_transform(grid, streams.np_bits)
    grid = transform_blocks(grid, INVERSE_D4[streams.d4_codes])
    grid = permute_blocks(grid, invert_permutation(streams.permutation))
    return assemble_blocks(grid)


def canonicalize_query(img: np.ndarray) -> np.ndarray:
    """Negate every odd-indexed block (raster order); key-independent.

    A retrieval server applies this to every incoming query, encrypted or
    plain, so both kinds of query end up with the same half-negated patch
    statistics as the stored ciphertexts.  Applying it twice is the identity.
    """
    grid = split_blocks(img)
    parity_bits = (np.arange(grid.n_blocks) % 2).astype(np.uint8)
    return assemble_blocks(np_transform(grid, parity_bits))


def generate_keysets(count: int, entropy_source=None) -> list[tuple[str, KeySet]]:
    """Create ``count`` fresh keysets with ids k0000, k0001, ...

    ``entropy_source`` is a zero-argument callable returning unsigned 64-bit
    integers; the default draws from the OS entropy pool.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if entropy_source is None:
        import secrets

        entropy_source = lambda: secrets.randbits(64)
    return [
        (
            f"k{i:04d}",
            KeySet(entropy_source(), entropy_source(), entropy_source()),
        )
        for i in range(count)
    ]


def save_keysets(keysets: list[tuple[str, KeySet]], path) -> None:
    """Write keysets as a JSON array; seeds as unsigned decimal strings."""
    records = [
        {
            "key_id": key_id,
            "k_perm": str(keys.k_perm),
            "k_rot": str(keys.k_rot),
            "k_np": str(keys.k_np),
        }
        for key_id, keys in keysets
    ]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")


def load_keysets(path) -> list[tuple[str, KeySet]]:
    path = Path(path)
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise ValueError(f"key file {path} must hold a JSON array")
    keysets = []
    try:
        for record in records:
            keysets.append(
                (
                    record["key_id"],
                    KeySet(
                        int(record["k_perm"]),
                        int(record["k_rot"]),
                        int(record["k_np"]),
                    ),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed key file {path}: {exc}") from exc
    return keysets
