"""Color patch descriptors: HSV histogram per 16x16 block, compacted by a Haar transform.

The descriptor of a patch is a function of the multiset of its pixel values
only, so any rearrangement of pixels inside a patch (rotation, mirroring) and
any permutation of whole blocks across an image leave the extracted
descriptors bit-identical.  That invariance is what lets retrieval work on
block-scrambled ciphertext images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_io import BLOCK, split_blocks

_PATCH_PIXELS = BLOCK * BLOCK


def _is_pow2(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class ScdConfig:
    """HSV quantization and coefficient truncation for patch descriptors.

    All bin counts must be powers of two so the flattened histogram length is
    one too (the Haar transform halves it repeatedly).  ``coeffs`` keeps the
    leading coefficients of the full decomposition: overall mean first, then
    details from coarsest to finest.
    """

    h_bins: int = 16
    s_bins: int = 4
    v_bins: int = 4
    coeffs: int = 64

    def __post_init__(self):
        for name in ("h_bins", "s_bins", "v_bins"):
            if not _is_pow2(getattr(self, name)):
                raise ValueError(f"{name} must be a power of two")
        if not 1 <= self.coeffs <= self.total_bins:
            raise ValueError(f"coeffs must lie in [1, {self.total_bins}]")

    @property
    def total_bins(self) -> int:
        return self.h_bins * self.s_bins * self.v_bins


def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone RGB -> HSV for (..., 3) arrays of 8-bit channels.

    Returns float64 with H in [0, 360), S and V in [0, 1].  H is defined as 0
    whenever S is 0 (grays, including black).
    """
    arr = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    v = arr.max(axis=-1)
    chroma = v - arr.min(axis=-1)
    safe_c = np.where(chroma > 0, chroma, 1.0)
    sector = np.where(
        r == v,
        ((g - b) / safe_c) % 6.0,
        np.where(g == v, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(chroma > 0, sector * 60.0, 0.0)
    s = np.where(v > 0, chroma / np.where(v > 0, v, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def quantize_hsv(hsv, cfg: ScdConfig) -> np.ndarray:
    """Map HSV values to flat histogram bin indices.

    Bins are uniform and right-open, except that the last bin of each axis is
    closed so that S = 1 or V = 1 still falls inside the histogram.
    Flat index = h * (s_bins * v_bins) + s * v_bins + v.
    """
    hsv = np.asarray(hsv, dtype=np.float64)
    h_idx = np.minimum(
        (hsv[..., 0] / 360.0 * cfg.h_bins).astype(np.int64), cfg.h_bins - 1
    )
    s_idx = np.minimum((hsv[..., 1] * cfg.s_bins).astype(np.int64), cfg.s_bins - 1)
    v_idx = np.minimum((hsv[..., 2] * cfg.v_bins).astype(np.int64), cfg.v_bins - 1)
    return h_idx * (cfg.s_bins * cfg.v_bins) + s_idx * cfg.v_bins + v_idx


def haar_transform(values) -> np.ndarray:
    """Full orthonormal 1-D Haar decomposition along the last axis.

    Each butterfly level maps pairs (a, b) to ((a + b) / sqrt 2,
    (a - b) / sqrt 2), then recurses on the averages, so the output holds the
    overall approximation first and finest details last.  The map is
    orthogonal: squared coefficients sum to the squared input entries.
    """
    out = np.array(values, dtype=np.float64, copy=True)
    width = out.shape[-1]
    if not _is_pow2(width):
        raise ValueError("Haar transform needs a power-of-two length")
    sqrt2 = np.sqrt(2.0)
    while width > 1:
        even = out[..., 0:width:2]
        odd = out[..., 1:width:2]
        averages = (even + odd) / sqrt2
        details = (even - odd) / sqrt2
        half = width // 2
        out[..., :half] = averages
        out[..., half:width] = details
        width = half
    return out


def _block_histograms(blocks: np.ndarray, cfg: ScdConfig) -> np.ndarray:
    """Normalized HSV histograms for a stack of (n, 16, 16, 3) blocks."""
    n = blocks.shape[0]
    idx = quantize_hsv(rgb_to_hsv(blocks), cfg)
    offsets = np.arange(n, dtype=np.int64)[:, None, None] * cfg.total_bins
    counts = np.bincount((idx + offsets).ravel(), minlength=n * cfg.total_bins)
    return counts.reshape(n, cfg.total_bins) / float(_PATCH_PIXELS)


def patch_histogram(patch, cfg: ScdConfig = ScdConfig()) -> np.ndarray:
    """Normalized HSV histogram of one 16x16 patch (sums to 1)."""
    arr = np.asarray(patch)
    if arr.shape != (BLOCK, BLOCK, 3) or arr.dtype != np.uint8:
        raise ValueError(
            f"patch must be ({BLOCK}, {BLOCK}, 3) uint8, got {arr.shape} {arr.dtype}"
        )
    return _block_histograms(arr[None], cfg)[0]


def _block_descriptors(blocks: np.ndarray, cfg: ScdConfig) -> np.ndarray:
    return haar_transform(_block_histograms(blocks, cfg))[:, : cfg.coeffs]


def compute_scd(patch, cfg: ScdConfig = ScdConfig()) -> np.ndarray:
    """Descriptor of one 16x16 RGB patch: length ``cfg.coeffs`` float64."""
    arr = np.asarray(patch)
    if arr.shape != (BLOCK, BLOCK, 3) or arr.dtype != np.uint8:
        raise ValueError(
            f"patch must be ({BLOCK}, {BLOCK}, 3) uint8, got {arr.shape} {arr.dtype}"
        )
    return _block_descriptors(arr[None], cfg)[0]


def extract_patches(img, cfg: ScdConfig = ScdConfig()) -> np.ndarray:
    """Descriptors of every 16x16 block of ``img``, raster order.

    Returns an (n_blocks, cfg.coeffs) float64 array; row j describes block j.
    """
    grid = split_blocks(img)
    return _block_descriptors(grid.blocks, cfg)
