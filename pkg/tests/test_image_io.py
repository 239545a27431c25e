import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from etcbir.image_io import (
    BlockGrid,
    DatasetManifest,
    ManifestEntry,
    assemble_blocks,
    center_crop_to_block_multiple,
    load_image,
    load_manifest,
    save_image,
    split_blocks,
    write_manifest,
)


def test_save_load_roundtrip_ppm_and_png(tmp_path, make_image):
    img = make_image(2, 3)
    for name in ("a.ppm", "a.png"):
        path = tmp_path / name
        save_image(img, path)
        assert np.array_equal(load_image(path), img)


def test_load_640x480_dimensions(tmp_path):
    img = np.zeros((480, 640, 3), dtype=np.uint8)
    save_image(img, tmp_path / "big.ppm")
    loaded = load_image(tmp_path / "big.ppm")
    assert loaded.shape == (480, 640, 3)


def test_load_all_black_block(tmp_path):
    img = np.zeros((16, 16, 3), dtype=np.uint8)
    save_image(img, tmp_path / "black.ppm")
    assert (load_image(tmp_path / "black.ppm") == 0).all()


def test_load_grayscale_promoted_by_replication(tmp_path, rng):
    gray = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
    Image.fromarray(gray, mode="L").save(tmp_path / "gray.png")
    loaded = load_image(tmp_path / "gray.png")
    for c in range(3):
        assert np.array_equal(loaded[:, :, c], gray)


def test_load_jpeg_accepted_for_reading(tmp_path, make_image):
    img = make_image(1, 1)
    Image.fromarray(img, mode="RGB").save(tmp_path / "x.jpg", quality=95)
    loaded = load_image(tmp_path / "x.jpg")
    assert loaded.shape == img.shape


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


def test_load_truncated_file_is_malformed(tmp_path, make_image):
    path = tmp_path / "t.png"
    save_image(make_image(2, 2), path)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(ValueError, match="malformed"):
        load_image(path)


def test_load_garbage_is_malformed(tmp_path):
    path = tmp_path / "g.ppm"
    path.write_bytes(b"not an image at all")
    with pytest.raises(ValueError, match="malformed"):
        load_image(path)


def test_load_16bit_rejected(tmp_path):
    deep = Image.new("I;16", (16, 16))
    deep.save(tmp_path / "deep.png")
    with pytest.raises(ValueError, match="bit depth|malformed"):
        load_image(tmp_path / "deep.png")


def test_save_rejects_lossy_suffix(tmp_path, make_image):
    with pytest.raises(ValueError, match="lossy|unknown"):
        save_image(make_image(1, 1), tmp_path / "x.jpg")


def test_save_into_missing_directory_fails(tmp_path, make_image):
    with pytest.raises(OSError):
        save_image(make_image(1, 1), tmp_path / "no" / "dir" / "x.png")


def test_split_640x480_grid():
    grid = split_blocks(np.zeros((480, 640, 3), dtype=np.uint8))
    assert (grid.rows, grid.cols, grid.n_blocks) == (30, 40, 1200)


def test_split_single_block(make_image):
    img = make_image(1, 1)
    grid = split_blocks(img)
    assert grid.n_blocks == 1
    assert np.array_equal(grid.blocks[0], img)


def test_split_rejects_non_divisible():
    with pytest.raises(ValueError, match="invalid dimensions"):
        split_blocks(np.zeros((16, 17, 3), dtype=np.uint8))


def test_split_raster_order(make_image):
    img = make_image(2, 3)
    grid = split_blocks(img)
    # block j covers rows (j // cols)*16..+16 and cols (j % cols)*16..+16
    for j in range(grid.n_blocks):
        r, c = divmod(j, grid.cols)
        ref = img[r * 16 : (r + 1) * 16, c * 16 : (c + 1) * 16]
        assert np.array_equal(grid.blocks[j], ref)


@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 5))
def test_split_assemble_bijection(seed, by, bx):
    img = np.random.default_rng(seed).integers(
        0, 256, size=(by * 16, bx * 16, 3), dtype=np.uint8
    )
    assert np.array_equal(assemble_blocks(split_blocks(img)), img)


def test_split_deterministic(make_image):
    img = make_image(3, 3)
    a, b = split_blocks(img), split_blocks(img)
    assert np.array_equal(a.blocks, b.blocks)


def test_assemble_permuted_blocks_splits_back(make_image, rng):
    grid = split_blocks(make_image(2, 2))
    perm = rng.permutation(grid.n_blocks)
    shuffled = BlockGrid(grid.rows, grid.cols, grid.blocks[perm])
    again = split_blocks(assemble_blocks(shuffled))
    assert np.array_equal(again.blocks, shuffled.blocks)


def test_center_crop_to_block_multiple():
    img = np.zeros((37, 50, 3), dtype=np.uint8)
    cropped = center_crop_to_block_multiple(img)
    assert cropped.shape == (32, 48, 3)
    with pytest.raises(ValueError):
        center_crop_to_block_multiple(np.zeros((10, 40, 3), dtype=np.uint8))


def _toy_manifest(tmp_path, mode=None):
    entries = [
        ManifestEntry("img0", tmp_path / "img0.png", "g0", "alice"),
        ManifestEntry("img1", tmp_path / "img1.png", "g0", "bob"),
        ManifestEntry("img2", tmp_path / "img2.png", "g1", "alice"),
    ]
    owners = {"alice": {"contact": "a@example.org"}, "bob": {"contact": "b@example.org"}}
    return DatasetManifest(entries=entries, owners=owners, mode=mode)


def test_manifest_roundtrip(tmp_path):
    manifest = _toy_manifest(tmp_path, mode="ukbench")
    write_manifest(manifest, tmp_path / "m.csv")
    loaded = load_manifest(tmp_path / "m.csv")
    assert loaded.mode == "ukbench"
    assert loaded.image_ids == ["img0", "img1", "img2"]
    assert [e.group_id for e in loaded.entries] == ["g0", "g0", "g1"]
    assert loaded.owners["bob"]["contact"] == "b@example.org"
    assert all(e.path.parent == tmp_path for e in loaded.entries)


def test_manifest_duplicate_ids_rejected(tmp_path):
    entries = [
        ManifestEntry("dup", tmp_path / "a.png", "g0", "o"),
        ManifestEntry("dup", tmp_path / "b.png", "g0", "o"),
    ]
    with pytest.raises(ValueError, match="duplicate image id"):
        DatasetManifest(entries=entries)


def test_manifest_empty_group_rejected(tmp_path):
    with pytest.raises(ValueError, match="empty group id"):
        DatasetManifest(entries=[ManifestEntry("a", tmp_path / "a.png", "", "o")])


def test_manifest_requires_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("img0,images/img0.png,g0,alice\n")
    with pytest.raises(ValueError, match="header"):
        load_manifest(path)


def test_manifest_comments_and_explicit_owners(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "# a comment\n"
        "image_id,path,group_id,owner_id\n"
        "x,img.png,g7,ada\n"
    )
    owners_path = tmp_path / "contacts.json"
    owners_path.write_text('{"ada": {"contact": "ada@example.org"}}')
    loaded = load_manifest(path, owners_path=owners_path)
    assert loaded.mode is None
    assert loaded.owners["ada"]["contact"] == "ada@example.org"
    assert loaded.owner_of("x") == "ada"
