import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psforensics.imaging import (CorruptImageError, ImageBuffer, UnsupportedFormatError, center_crop,
                                 crop_offsets, extract_blocks, green_channel, load_image,
                                 round_half_away, save_image)


def test_ppm_decode_known_bytes(tmp_path):
    samples = bytes(range(10, 22))
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + samples)
    img = load_image(p)
    assert img.shape == (2, 2, 3)
    assert img.data.tobytes() == samples


def test_ppm_header_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6 # comment\n1 1\n# another\n255\n" + bytes([1, 2, 3]))
    assert load_image(p).data.ravel().tolist() == [1, 2, 3]


def test_pgm_is_single_channel(tmp_path):
    p = tmp_path / "g.pgm"
    p.write_bytes(b"P5\n3 1\n255\n" + bytes([0, 128, 255]))
    img = load_image(p)
    assert img.channels == 1
    assert img.data[0, :, 0].tolist() == [0, 128, 255]


def test_truncated_is_corrupt(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(CorruptImageError):
        load_image(p)


def test_truncated_png_is_corrupt(tmp_path, rgb):
    p = save_image(rgb, tmp_path / "x.png")
    p.write_bytes(p.read_bytes()[:40])
    with pytest.raises(CorruptImageError):
        load_image(p)


def test_missing_and_unsupported(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")
    p = tmp_path / "x.gif"
    p.write_bytes(b"GIF89a....")
    with pytest.raises(UnsupportedFormatError):
        load_image(p)
    with pytest.raises(UnsupportedFormatError):
        save_image(ImageBuffer(np.zeros((2, 2, 3), np.uint8)), tmp_path / "x.bmp")


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_roundtrip(tmp_path, rgb, suffix):
    out = save_image(rgb, tmp_path / f"img{suffix}")
    assert load_image(out) == rgb


def test_gray_forces_pgm(tmp_path):
    img = ImageBuffer(np.arange(12, dtype=np.uint8).reshape(3, 4))
    out = save_image(img, tmp_path / "g.ppm")
    assert out.suffix == ".pgm"
    assert out.read_bytes().startswith(b"P5")
    assert load_image(out) == img
    assert load_image(save_image(img, tmp_path / "g.png")) == img


def test_rgb_writes_ppm(tmp_path, rgb):
    out = save_image(rgb, tmp_path / "c.pgm")
    assert out.suffix == ".ppm" and out.read_bytes().startswith(b"P6")


def test_unwritable_path(tmp_path, rgb):
    with pytest.raises(Exception):
        save_image(rgb, tmp_path / "missing_dir" / "x.png")


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), c=st.sampled_from([1, 3]),
       seed=st.integers(0, 2 ** 31), suffix=st.sampled_from([".png", ".ppm"]))
def test_roundtrip_property(tmp_path_factory, h, w, c, seed, suffix):
    data = np.random.default_rng(seed).integers(0, 256, size=(h, w, c), dtype=np.uint8)
    img = ImageBuffer(data)
    out = save_image(img, tmp_path_factory.mktemp("rt") / f"x{suffix}")
    assert load_image(out) == img


def test_buffer_validation():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(ValueError):
        ImageBuffer(np.full((2, 2, 3), 300))
    assert ImageBuffer(np.full((2, 2), 7)).channels == 1


def test_round_half_away():
    assert round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -1.5, 1.49])).tolist() == [1, 2, 3, -1, -2, 1]


def test_center_crop_offsets():
    assert crop_offsets(1700, 2200, 1536, 1792) == (82, 204)
    img = ImageBuffer(np.arange(16, dtype=np.uint8).reshape(4, 4))
    assert center_crop(img, 2, 2).data[:, :, 0].tolist() == [[5, 6], [9, 10]]
    assert center_crop(img, 4, 4) == img
    with pytest.raises(ValueError):
        center_crop(img, 5, 4)


def test_center_crop_content(rgb):
    out = center_crop(rgb, 11, 20)
    assert np.array_equal(out.data, rgb.data[6:17, 6:26])


def _fake(h, w):
    return ImageBuffer(np.zeros((h, w, 1), np.uint8))


def test_block_counts():
    assert len(extract_blocks(_fake(1536, 1792), 256)) == 42
    assert len(extract_blocks(_fake(1536, 1792), 299)) == 25


def test_blocks_disjoint_and_centred():
    img = _fake(100, 130)
    blocks = extract_blocks(img, 32)
    assert len(blocks) == 3 * 4
    rows = sorted({b.origin_row for b in blocks})
    cols = sorted({b.origin_col for b in blocks})
    assert rows == [2, 34, 66] and cols == [1, 33, 65, 97]
    cover = np.zeros((100, 130), int)
    for b in blocks:
        assert b.pixels.shape == (32, 32, 1)
        cover[b.origin_row:b.origin_row + 32, b.origin_col:b.origin_col + 32] += 1
    assert cover.max() == 1 and cover.sum() == 12 * 32 * 32


def test_block_content(rgb):
    for b in extract_blocks(rgb, 8):
        assert np.array_equal(b.pixels.data, rgb.data[b.origin_row:b.origin_row + 8,
                                                      b.origin_col:b.origin_col + 8])


def test_central_nine_odd_grid():
    blocks = extract_blocks(_fake(5 * 16, 5 * 16), 16, "central(9)")
    assert [b.grid_index for b in blocks] == [(r, c) for r in (1, 2, 3) for c in (1, 2, 3)]
    tuple_form = extract_blocks(_fake(80, 80), 16, ("central", 9))
    assert [b.grid_index for b in tuple_form] == [b.grid_index for b in blocks]


def test_central_tie_break_row_major():
    # 2x2 grid: all four cells equidistant, so row-major order decides
    blocks = extract_blocks(_fake(32, 32), 16, "central(2)")
    assert [b.grid_index for b in blocks] == [(0, 0), (0, 1)]


def test_central_paper_grid_is_deterministic():
    a = extract_blocks(_fake(1536, 1792), 256, "central(9)")
    b = extract_blocks(_fake(1536, 1792), 256, "central(9)")
    assert [x.grid_index for x in a] == [x.grid_index for x in b]
    assert len(a) == 9
    assert (2, 3) in [x.grid_index for x in a] and (3, 3) in [x.grid_index for x in a]


def test_block_errors():
    with pytest.raises(ValueError):
        extract_blocks(_fake(10, 10), 11)
    with pytest.raises(ValueError):
        extract_blocks(_fake(32, 32), 16, "central(5)")


def test_green_channel():
    img = ImageBuffer(np.array([[[10, 20, 30]]], np.uint8))
    assert green_channel(img).data.ravel().tolist() == [20]
    g = np.zeros((3, 3, 3), np.uint8)
    g[:, :, 1] = 77
    assert np.all(green_channel(ImageBuffer(g)).data == 77)
    with pytest.raises(ValueError):
        green_channel(_fake(2, 2))
