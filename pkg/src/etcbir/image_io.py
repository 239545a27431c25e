"""8-bit RGB raster I/O, 16x16 block decomposition, and dataset manifests."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

BLOCK = 16

_READ_FORMATS = ("PPM", "PNG", "JPEG")
_SAVE_SUFFIXES = {".ppm", ".png"}
_HIGH_DEPTH_MODES = {"I", "F", "I;16", "I;16B", "I;16L", "I;16N"}


def validate_image(img) -> np.ndarray:
    """Check that ``img`` is a non-empty (H, W, 3) uint8 array and return it."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(
            f"expected (H, W, 3) uint8 pixels, got shape {arr.shape} dtype {arr.dtype}"
        )
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image has zero area")
    return arr


def load_image(path) -> np.ndarray:
    """Load a PPM (P6), PNG, or JPEG file as an (H, W, 3) uint8 array.

    Grayscale inputs are promoted to RGB by channel replication.  JPEG is
    accepted for reading only; all writes go through a lossless format.
    16-bit and float rasters are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path, formats=_READ_FORMATS) as im:
            if im.mode in _HIGH_DEPTH_MODES:
                raise ValueError(f"unsupported bit depth (mode {im.mode}): {path}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValueError(f"malformed image file {path}: {exc}") from exc
    return validate_image(arr)


def save_image(img, path) -> None:
    """Write ``img`` losslessly; the suffix selects the format (.ppm or .png)."""
    arr = validate_image(img)
    path = Path(path)
    if path.suffix.lower() not in _SAVE_SUFFIXES:
        raise ValueError(
            f"refusing lossy or unknown output format {path.suffix!r}; use .ppm or .png"
        )
    Image.fromarray(arr, mode="RGB").save(path)


@dataclass(frozen=True)
class BlockGrid:
    """An image decomposed into non-overlapping 16x16 RGB blocks.

    Blocks are kept in raster order: block j sits at row j // cols,
    column j % cols of the source image.
    """

    rows: int
    cols: int
    blocks: np.ndarray  # (rows * cols, 16, 16, 3) uint8

    def __post_init__(self):
        expected = (self.rows * self.cols, BLOCK, BLOCK, 3)
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"invalid grid {self.rows}x{self.cols}")
        if self.blocks.shape != expected or self.blocks.dtype != np.uint8:
            raise ValueError(
                f"expected blocks of shape {expected} uint8, got "
                f"{self.blocks.shape} {self.blocks.dtype}"
            )

    @property
    def n_blocks(self) -> int:
        return self.rows * self.cols

    def replace_blocks(self, blocks: np.ndarray) -> "BlockGrid":
        return BlockGrid(self.rows, self.cols, blocks)


def split_blocks(img) -> BlockGrid:
    """Split an image into its 16x16 block grid, raster order.

    Dimensions must be multiples of 16; nothing is padded or cropped here.
    """
    arr = validate_image(img)
    height, width = arr.shape[:2]
    if height % BLOCK or width % BLOCK:
        raise ValueError(
            f"invalid dimensions: {width}x{height} is not divisible by {BLOCK}"
        )
    rows, cols = height // BLOCK, width // BLOCK
    blocks = (
        arr.reshape(rows, BLOCK, cols, BLOCK, 3)
        .swapaxes(1, 2)
        .reshape(rows * cols, BLOCK, BLOCK, 3)
    )
    return BlockGrid(rows, cols, np.ascontiguousarray(blocks))


def assemble_blocks(grid: BlockGrid) -> np.ndarray:
    """Exact inverse of :func:`split_blocks`."""
    stitched = (
        grid.blocks.reshape(grid.rows, grid.cols, BLOCK, BLOCK, 3)
        .swapaxes(1, 2)
        .reshape(grid.rows * BLOCK, grid.cols * BLOCK, 3)
    )
    return np.ascontiguousarray(stitched)


def center_crop_to_block_multiple(img) -> np.ndarray:
    """Crop to the largest centered region with 16-divisible dimensions."""
    arr = validate_image(img)
    height, width = arr.shape[:2]
    new_h, new_w = height - height % BLOCK, width - width % BLOCK
    if new_h == 0 or new_w == 0:
        raise ValueError(f"image {width}x{height} smaller than one {BLOCK}px block")
    top = (height - new_h) // 2
    left = (width - new_w) // 2
    return arr[top : top + new_h, left : left + new_w].copy()


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: Path
    group_id: str
    owner_id: str


@dataclass
class DatasetManifest:
    """Dataset listing plus owner contact records.

    ``mode`` may be "ukbench" to declare the fixed 4-images-per-group layout
    of that benchmark; evaluation enforces the group size only then.
    """

    entries: list[ManifestEntry]
    owners: dict[str, dict] = field(default_factory=dict)
    mode: str | None = None

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.image_id in seen:
                raise ValueError(f"duplicate image id in manifest: {entry.image_id}")
            seen.add(entry.image_id)
            if not entry.group_id:
                raise ValueError(f"empty group id for image {entry.image_id}")

    @property
    def image_ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def owner_of(self, image_id: str) -> str:
        for entry in self.entries:
            if entry.image_id == image_id:
                return entry.owner_id
        raise KeyError(image_id)


_MANIFEST_FIELDS = ["image_id", "path", "group_id", "owner_id"]


def load_manifest(path, owners_path=None) -> DatasetManifest:
    """Read a CSV manifest with columns image_id, path, group_id, owner_id.

    Lines starting with ``#`` are comments; ``# mode: ukbench`` declares the
    dataset mode.  Relative image paths resolve against the manifest's
    directory.  Owner records come from ``owners_path`` (default:
    ``owners.json`` next to the manifest) when that file exists.
    """
    path = Path(path)
    mode = None
    rows = []
    with open(path, newline="") as fh:
        data_lines = []
        for line in fh:
            stripped = line.strip()
            if stripped.startswith("#"):
                directive = stripped.lstrip("#").strip()
                if directive.lower().startswith("mode:"):
                    mode = directive.split(":", 1)[1].strip().lower()
                continue
            if stripped:
                data_lines.append(line)
        rows = list(csv.reader(data_lines))
    if not rows or [c.strip() for c in rows[0]] != _MANIFEST_FIELDS:
        raise ValueError(
            f"manifest {path} must start with header {','.join(_MANIFEST_FIELDS)}"
        )
    base = path.parent
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(_MANIFEST_FIELDS):
            raise ValueError(f"manifest {path} line {lineno}: expected 4 fields")
        image_id, rel, group_id, owner_id = (c.strip() for c in row)
        img_path = Path(rel)
        if not img_path.is_absolute():
            img_path = base / img_path
        entries.append(ManifestEntry(image_id, img_path, group_id, owner_id))

    if owners_path is None:
        candidate = base / "owners.json"
        owners_path = candidate if candidate.is_file() else None
    owners = {}
    if owners_path is not None:
        with open(owners_path) as fh:
            owners = json.load(fh)
        if not isinstance(owners, dict):
            raise ValueError(f"owners file {owners_path} must hold an object")
    return DatasetManifest(entries=entries, owners=owners, mode=mode)


def write_manifest(manifest: DatasetManifest, path, owners_path=None) -> None:
    """Write ``manifest`` as CSV; image paths are stored relative when possible."""
    path = Path(path)
    base = path.parent
    with open(path, "w", newline="") as fh:
        if manifest.mode:
            fh.write(f"# mode: {manifest.mode}\n")
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_FIELDS)
        for entry in manifest.entries:
            img_path = Path(entry.path)
            try:
                rel = img_path.relative_to(base)
            except ValueError:
                rel = img_path
            writer.writerow([entry.image_id, str(rel), entry.group_id, entry.owner_id])
    if manifest.owners:
        owners_path = Path(owners_path) if owners_path else base / "owners.json"
        with open(owners_path, "w") as fh:
            json.dump(manifest.owners, fh, indent=2, sort_keys=True)
            fh.write("\n")
