"""Synthetic grouped retrieval benchmark.

Images are mosaics of 16x16 color cells.  Background cells come from a small
set of muted colors present in every image, so their visual words occur in
all stored images and tf-idf weighting suppresses them.  Each group is
identified by a few bright accent cells whose colors come from one shared
pool; groups overlap in one or two accent colors, which keeps ranking
sensitive to how much accent evidence actually survives in the index.

Variants of a group are crops of one oversized canvas at block-aligned
offsets with per-pixel noise, so within-group images agree on accent content
without being pixel-identical.  Noise is drawn per pixel rather than as a
global shift: a whole-image photometric bias makes an image's background
patches statistically distinctive, which re-weights backgrounds into the
descriptors and drowns the accent signal (the jitter knob exists to study
exactly that).  Accent colors sit in a bright HSV tier whose channel-negated
counterparts land in a distinct darker tier, so a color and any negated
color never share a histogram bin.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image_io import BLOCK, DatasetManifest, ManifestEntry, save_image, write_manifest
from .scd import rgb_to_hsv


@dataclass(frozen=True)
class SynthConfig:
    groups: int = 50
    group_size: int = 4
    width: int = 160
    height: int = 128
    accent_pool: int = 16  # shared accent colors, one per 22.5-degree hue bin
    accents_per_group: int = 4
    accent_cells: int = 4  # cells carrying each accent color, per image
    bg_colors: int = 3
    jitter: int = 0  # max abs per-channel offset per variant (see module note)
    noise: int = 4  # max abs per-pixel uniform noise
    crop_cells: int = 3  # crop offsets in cells, 0..crop_cells inclusive
    owners: int = 5
    seed: int = 7

    def __post_init__(self):
        if self.width % BLOCK or self.height % BLOCK:
            raise ValueError(f"width and height must be multiples of {BLOCK}")
        if self.groups < 1 or self.group_size < 1:
            raise ValueError("need at least one group with one image")
        if self.accents_per_group > self.accent_pool:
            raise ValueError("accents_per_group cannot exceed accent_pool")

    @property
    def cells_x(self) -> int:
        return self.width // BLOCK

    @property
    def cells_y(self) -> int:
        return self.height // BLOCK


def _hsv_to_rgb_u8(h: float, s: float, v: float) -> np.ndarray:
    c = v * s
    x = c * (1 - abs((h / 60.0) % 2 - 1))
    m = v - c
    sector = int(h // 60) % 6
    rgb = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][sector]
    return np.clip(np.round((np.array(rgb) + m) * 255.0), 0, 255).astype(np.uint8)


def _accent_palette(cfg: SynthConfig) -> np.ndarray:
    # bright tier: V=0.95 keeps accents in the top V bin under jitter, while
    # their negations drop to V ~ 0.62, a different bin for any hue
    hues = (np.arange(cfg.accent_pool) + 0.5) * (360.0 / cfg.accent_pool)
    return np.stack([_hsv_to_rgb_u8(h, 0.60, 0.95) for h in hues])


def _background_palette(cfg: SynthConfig) -> np.ndarray:
    hues = np.linspace(30.0, 300.0, cfg.bg_colors)
    vals = np.linspace(0.35, 0.85, cfg.bg_colors)
    return np.stack([_hsv_to_rgb_u8(h, 0.22, v) for h, v in zip(hues, vals)])


def _choose_group_accents(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple]:
    """Distinct accent-color combinations, one per group."""
    combos: list[tuple] = []
    seen = set()
    while len(combos) < cfg.groups:
        combo = tuple(
            sorted(rng.choice(cfg.accent_pool, cfg.accents_per_group, replace=False))
        )
        if combo not in seen:
            seen.add(combo)
            combos.append(combo)
    return combos


def _group_canvas(
    rng: np.random.Generator,
    cfg: SynthConfig,
    accents: np.ndarray,
    backgrounds: np.ndarray,
    combo: tuple,
) -> np.ndarray:
    """Cell-color canvas (canvas_y, canvas_x, 3); crops of it make the variants."""
    canvas_x = cfg.cells_x + cfg.crop_cells
    canvas_y = cfg.cells_y + cfg.crop_cells
    field = backgrounds[rng.integers(0, len(backgrounds), size=(canvas_y, canvas_x))]
    # accent cells live in the window intersection so every crop keeps them all
    core_x = np.arange(cfg.crop_cells, cfg.cells_x)
    core_y = np.arange(cfg.crop_cells, cfg.cells_y)
    core = [(y, x) for y in core_y for x in core_x]
    n_accent_cells = cfg.accents_per_group * cfg.accent_cells
    spots = rng.choice(len(core), size=n_accent_cells, replace=False)
    for i, spot in enumerate(spots):
        y, x = core[spot]
        field[y, x] = accents[combo[i // cfg.accent_cells]]
    return field


def _variant(
    rng: np.random.Generator, cfg: SynthConfig, canvas: np.ndarray
) -> np.ndarray:
    ox = int(rng.integers(0, cfg.crop_cells + 1))
    oy = int(rng.integers(0, cfg.crop_cells + 1))
    cells = canvas[oy : oy + cfg.cells_y, ox : ox + cfg.cells_x]
    img = np.repeat(np.repeat(cells, BLOCK, axis=0), BLOCK, axis=1).astype(np.int16)
    shift = rng.integers(-cfg.jitter, cfg.jitter + 1, size=3, dtype=np.int16)
    noise = rng.integers(-cfg.noise, cfg.noise + 1, size=img.shape, dtype=np.int16)
    return np.clip(img + shift[None, None, :] + noise, 0, 255).astype(np.uint8)


def generate_images(cfg: SynthConfig = SynthConfig()):
    """Yield (image_id, group_id, owner_id, image) for the whole benchmark."""
    rng = np.random.default_rng(cfg.seed)
    accents = _accent_palette(cfg)
    backgrounds = _background_palette(cfg)
    combos = _choose_group_accents(rng, cfg)
    for g in range(cfg.groups):
        group_id = f"g{g:03d}"
        canvas = _group_canvas(rng, cfg, accents, backgrounds, combos[g])
        for v in range(cfg.group_size):
            image_id = f"{group_id}v{v}"
            owner_id = f"owner{(g * cfg.group_size + v) % cfg.owners:02d}"
            yield image_id, group_id, owner_id, _variant(rng, cfg, canvas)


def generate_dataset(out_dir, cfg: SynthConfig = SynthConfig()) -> DatasetManifest:
    """Write images, manifest.csv, and owners.json under ``out_dir``."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for image_id, group_id, owner_id, img in generate_images(cfg):
        path = images_dir / f"{image_id}.png"
        save_image(img, path)
        entries.append(ManifestEntry(image_id, path, group_id, owner_id))
    owners = {
        f"owner{i:02d}": {
            "name": f"Owner {i:02d}",
            "contact": f"owner{i:02d}@example.org",
        }
        for i in range(cfg.owners)
    }
    manifest = DatasetManifest(entries=entries, owners=owners)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def mean_saturation(img) -> float:
    """Average HSV saturation; a quick color-richness measure for tests."""
    return float(rgb_to_hsv(img)[..., 1].mean())
