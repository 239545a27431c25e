from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from etcbir.cipher import (
    INVERSE_D4,
    KeySet,
    SplitMix64,
    canonicalize_query,
    decrypt,
    derive_streams,
    encrypt,
    generate_keysets,
    invert_permutation,
    load_keysets,
    np_transform,
    permute_blocks,
    save_keysets,
    transform_blocks,
)
from etcbir.image_io import assemble_blocks, load_image, split_blocks

DATA = Path(__file__).parent / "data"


def test_splitmix64_deterministic_stream():
    a = SplitMix64(987654321)
    b = SplitMix64(987654321)
    assert [a.next_u64() for _ in range(5)] == [b.next_u64() for _ in range(5)]
    assert SplitMix64(1).next_u64() != SplitMix64(2).next_u64()


def test_splitmix64_outputs_fill_64_bits():
    rng = SplitMix64(7)
    values = [rng.next_u64() for _ in range(256)]
    assert all(0 <= v < 2**64 for v in values)
    assert max(values) > 2**63  # top bit is exercised
    assert len(set(values)) == len(values)


def test_keyset_validates_range():
    KeySet(0, 2**64 - 1, 5)
    with pytest.raises(ValueError):
        KeySet(-1, 0, 0)
    with pytest.raises(ValueError):
        KeySet(0, 2**64, 0)


def test_derive_streams_single_block():
    streams = derive_streams(KeySet(1, 2, 3), 1)
    assert streams.permutation.tolist() == [0]
    assert streams.d4_codes.shape == (1,) and 0 <= streams.d4_codes[0] < 8
    assert streams.np_bits[0] in (0, 1)


def test_derive_streams_deterministic():
    keys = KeySet(11, 22, 33)
    s1, s2 = derive_streams(keys, 100), derive_streams(keys, 100)
    assert np.array_equal(s1.permutation, s2.permutation)
    assert np.array_equal(s1.d4_codes, s2.d4_codes)
    assert np.array_equal(s1.np_bits, s2.np_bits)


def test_derive_streams_rejects_empty():
    with pytest.raises(ValueError, match="empty image"):
        derive_streams(KeySet(1, 2, 3), 0)


def test_np_bit_frequency_near_half():
    # binomial bound: 10 x 1200 fair bits stay within [0.42, 0.58] per run
    for seed in range(10):
        bits = derive_streams(KeySet(0, 0, seed), 1200).np_bits
        assert 0.42 <= bits.mean() <= 0.58


def test_streams_are_key_separated():
    base = derive_streams(KeySet(5, 6, 7), 64)
    other_np = derive_streams(KeySet(5, 6, 8), 64)
    assert np.array_equal(base.permutation, other_np.permutation)
    assert np.array_equal(base.d4_codes, other_np.d4_codes)
    assert not np.array_equal(base.np_bits, other_np.np_bits)
    other_perm = derive_streams(KeySet(9, 6, 7), 64)
    assert not np.array_equal(base.permutation, other_perm.permutation)
    assert np.array_equal(base.d4_codes, other_perm.d4_codes)


def test_permutation_is_bijection():
    perm = derive_streams(KeySet(42, 0, 0), 1200).permutation
    assert np.array_equal(np.sort(perm), np.arange(1200))


def test_permute_identity_and_swap(make_image):
    grid = split_blocks(make_image(1, 2))
    same = permute_blocks(grid, np.array([0, 1]))
    assert np.array_equal(same.blocks, grid.blocks)
    swapped = permute_blocks(grid, np.array([1, 0]))
    assert np.array_equal(swapped.blocks[0], grid.blocks[1])
    assert np.array_equal(swapped.blocks[1], grid.blocks[0])


def test_permute_direction_is_destination(make_image):
    grid = split_blocks(make_image(2, 2))
    perm = np.array([2, 0, 3, 1])
    moved = permute_blocks(grid, perm)
    for j in range(4):
        assert np.array_equal(moved.blocks[perm[j]], grid.blocks[j])


def test_permute_then_inverse_roundtrips(make_image, rng):
    grid = split_blocks(make_image(3, 4))
    perm = rng.permutation(grid.n_blocks)
    back = permute_blocks(permute_blocks(grid, perm), invert_permutation(perm))
    assert np.array_equal(back.blocks, grid.blocks)


def test_permute_rejects_non_bijection(make_image):
    grid = split_blocks(make_image(1, 2))
    with pytest.raises(ValueError, match="bijection"):
        permute_blocks(grid, np.array([0, 0]))
    with pytest.raises(ValueError, match="length"):
        permute_blocks(grid, np.array([0]))


def test_transform_code_zero_is_identity(make_image):
    grid = split_blocks(make_image(2, 2))
    out = transform_blocks(grid, np.zeros(4, dtype=np.uint8))
    assert np.array_equal(out.blocks, grid.blocks)


def test_transform_code2_is_involution(make_image):
    grid = split_blocks(make_image(1, 1))
    codes = np.array([2], dtype=np.uint8)
    twice = transform_blocks(transform_blocks(grid, codes), codes)
    assert np.array_equal(twice.blocks, grid.blocks)


def test_transform_uniform_block_fixed():
    block = np.full((1, 16, 16, 3), 77, dtype=np.uint8)
    from etcbir.image_io import BlockGrid

    grid = BlockGrid(1, 1, block)
    for code in range(8):
        out = transform_blocks(grid, np.array([code], dtype=np.uint8))
        assert np.array_equal(out.blocks, block)


def test_transform_inverse_codes(make_image):
    grid = split_blocks(make_image(1, 1))
    for code in range(8):
        codes = np.array([code], dtype=np.uint8)
        back = transform_blocks(transform_blocks(grid, codes), INVERSE_D4[codes])
        assert np.array_equal(back.blocks, grid.blocks), f"code {code}"


def test_transform_preserves_pixel_multiset(make_image):
    grid = split_blocks(make_image(1, 1))
    for code in range(8):
        out = transform_blocks(grid, np.array([code], dtype=np.uint8))
        assert sorted(out.blocks.reshape(-1, 3).tolist()) == sorted(
            grid.blocks.reshape(-1, 3).tolist()
        )


def test_transform_rejects_bad_codes(make_image):
    grid = split_blocks(make_image(1, 1))
    with pytest.raises(ValueError, match="codes"):
        transform_blocks(grid, np.array([8], dtype=np.int64))


def test_np_transform_values(make_image):
    img = np.full((16, 32, 3), 200, dtype=np.uint8)
    img[:, 16:] = 100
    grid = split_blocks(img)
    out = np_transform(grid, np.array([1, 0], dtype=np.uint8))
    assert (out.blocks[0] == 55).all()  # 255 - 200, flipped block
    assert (out.blocks[1] == 100).all()  # untouched block


def test_np_transform_involution(make_image, rng):
    grid = split_blocks(make_image(2, 3))
    bits = rng.integers(0, 2, size=grid.n_blocks).astype(np.uint8)
    twice = np_transform(np_transform(grid, bits), bits)
    assert np.array_equal(twice.blocks, grid.blocks)


def test_encrypt_constant_image_only_np_visible():
    img = np.zeros((480, 640, 3), dtype=np.uint8)
    keys = KeySet(4, 5, 6)
    etc = split_blocks(encrypt(img, keys))
    bits = derive_streams(keys, etc.n_blocks).np_bits
    for j in range(etc.n_blocks):
        expected = 255 if bits[j] else 0
        assert (etc.blocks[j] == expected).all()


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_decrypt_inverts_encrypt(seed, by, bx):
    gen = np.random.default_rng(seed)
    img = gen.integers(0, 256, size=(by * 16, bx * 16, 3), dtype=np.uint8)
    keys = KeySet(*(int(x) for x in gen.integers(0, 2**63, size=3)))
    assert np.array_equal(decrypt(encrypt(img, keys), keys), img)


def test_decrypt_wrong_keys_differs(make_image):
    img = make_image(3, 3)
    etc = encrypt(img, KeySet(1, 2, 3))
    wrong = decrypt(etc, KeySet(3, 2, 1))
    assert wrong.shape == img.shape
    assert not np.array_equal(wrong, img)


def test_encrypt_golden_regression():
    plain = load_image(DATA / "golden_plain.ppm")
    golden = load_image(DATA / "golden_etc.ppm")
    assert np.array_equal(encrypt(plain, KeySet(1, 2, 3)), golden)


def test_decrypt_golden_regression():
    plain = load_image(DATA / "golden_plain.ppm")
    golden = load_image(DATA / "golden_etc.ppm")
    assert np.array_equal(decrypt(golden, KeySet(1, 2, 3)), plain)


def test_canonicalize_single_block_unchanged(make_image):
    img = make_image(1, 1)
    assert np.array_equal(canonicalize_query(img), img)


def test_canonicalize_two_blocks():
    img = np.full((16, 32, 3), 100, dtype=np.uint8)
    out = split_blocks(canonicalize_query(img))
    assert (out.blocks[0] == 100).all()
    assert (out.blocks[1] == 155).all()


def test_canonicalize_is_involution(make_image):
    img = make_image(4, 3)
    assert np.array_equal(canonicalize_query(canonicalize_query(img)), img)


def test_canonicalize_negates_odd_raster_blocks(make_image):
    img = make_image(2, 3)
    grid = split_blocks(img)
    out = split_blocks(canonicalize_query(img))
    for j in range(grid.n_blocks):
        expected = 255 - grid.blocks[j] if j % 2 else grid.blocks[j]
        assert np.array_equal(out.blocks[j], expected)


def test_generate_keysets_validation_and_uniqueness():
    with pytest.raises(ValueError):
        generate_keysets(0)
    keysets = generate_keysets(50)
    seeds = [s for _, k in keysets for s in (k.k_perm, k.k_rot, k.k_np)]
    assert len(set(seeds)) == len(seeds)
    assert [kid for kid, _ in keysets][:2] == ["k0000", "k0001"]


def test_keyset_file_roundtrip(tmp_path):
    keysets = [("a", KeySet(1, 2, 3)), ("b", KeySet(2**64 - 1, 0, 7))]
    path = tmp_path / "keys.json"
    save_keysets(keysets, path)
    assert load_keysets(path) == keysets


def test_keyset_file_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('[{"key_id": "a"}]')
    with pytest.raises(ValueError, match="malformed key file"):
        load_keysets(path)
    path.write_text('{"not": "a list"}')
    with pytest.raises(ValueError, match="array"):
        load_keysets(path)
