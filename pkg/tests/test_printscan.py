import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from psforensics.harness.synth import synth_photo
from psforensics.imaging import ImageBuffer
from psforensics.printscan import (MAX_JITTER, PrinterProfile, ProfileError, default_profiles,
                                   identity_profile, screen_thresholds, simulate_printscan)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def photo():
    return synth_photo(48, 64, 2)


def test_identity_profile(photo, rgb):
    for img in (photo, rgb):
        assert np.array_equal(simulate_printscan(img, identity_profile(), 3).data, img.data)


@pytest.mark.parametrize("profile", default_profiles(), ids=lambda p: p.name)
def test_default_profile_degrades(photo, profile):
    out = simulate_printscan(photo, profile, 1)
    assert out.shape == photo.shape and out.data.dtype == np.uint8
    assert np.mean((out.data.astype(float) - photo.data) ** 2) > 0
    assert np.array_equal(out.data, simulate_printscan(photo, profile, 1).data)
    assert not np.array_equal(out.data, simulate_printscan(photo, profile, 2).data)


def test_default_profiles_distinct():
    profiles = default_profiles()
    assert [p.name for p in profiles] == ["sim-dell", "sim-xerox1", "sim-xerox2"]
    for i in range(3):
        for j in range(i + 1, 3):
            assert len(profiles[i].differing_fields(profiles[j])) >= 2


def test_golden_checksums():
    sys.path.insert(0, str(FIXTURES))
    try:
        from make_printscan_golden import digests
    finally:
        sys.path.pop(0)
    golden = json.loads((FIXTURES / "printscan_golden.json").read_text())
    assert digests() == golden["sha256"]


def test_stages_individually(photo):
    base = identity_profile("x")
    for field, value in (("halftone_amplitude", 10.0), ("blur_sigma", 1.0), ("noise_sigma", 2.0),
                         ("gain_field_amplitude", 0.1), ("requant_quality", 75),
                         ("color_offset", (5.0, 0.0, 0.0))):
        out = simulate_printscan(photo, replace(base, **{field: value}), 0)
        assert out.shape == photo.shape
        assert not np.array_equal(out.data, photo.data), field


def test_jitter_rounds_to_whole_pixels():
    # a rescale smaller than half a pixel is a no-op; a 160px page moves by up to 3px
    prof = PrinterProfile("j", geometric_jitter=0.02)
    small, big = synth_photo(20, 20, 1), synth_photo(160, 160, 1)
    assert np.array_equal(simulate_printscan(small, prof, 0).data, small.data)
    changed = [not np.array_equal(simulate_printscan(big, prof, s).data, big.data) for s in range(5)]
    assert sum(changed) >= 3


def test_colour_transform_exact():
    img = ImageBuffer(np.full((4, 4, 3), 100, np.uint8))
    prof = PrinterProfile("c", color_matrix=((1.1, 0, 0), (0, 1, 0), (0, 0, 0.9)), color_offset=(0, 5, 0))
    assert simulate_printscan(img, prof).data[0, 0].tolist() == [110, 105, 90]


def test_halftone_screen():
    t = screen_thresholds(4)
    assert t.shape == (4, 4) and len(np.unique(t)) == 16
    assert abs(t.mean()) < 1e-12 and t.max() < 0.5 and t.min() > -0.5
    # halftone leaves pure black and white untouched
    bw = ImageBuffer(np.stack([np.zeros((8, 8)), np.full((8, 8), 255)], axis=1).reshape(8, 16)[..., None]
                     .repeat(3, axis=2).astype(np.uint8))
    out = simulate_printscan(bw, PrinterProfile("h", halftone_amplitude=30.0), 0)
    assert np.array_equal(out.data, bw.data)


@pytest.mark.parametrize("kw", [
    {"halftone_amplitude": -1.0}, {"halftone_cell": 1}, {"blur_sigma": -0.1}, {"noise_sigma": -1},
    {"geometric_jitter": MAX_JITTER * 1.5}, {"requant_quality": 0}, {"gain_field_amplitude": 1.0},
    {"color_matrix": ((1.3, 0, 0), (0, 1, 0), (0, 0, 1))}, {"color_matrix": ((1, 0), (0, 1))},
    {"color_offset": (1.0, 2.0)}, {"name": ""},
])
def test_profile_validation(kw):
    with pytest.raises(ProfileError):
        PrinterProfile(**{"name": "bad", **kw})


def test_input_validation():
    gray = ImageBuffer(np.zeros((8, 8, 1), np.uint8))
    with pytest.raises(ValueError):
        simulate_printscan(gray, identity_profile())
    with pytest.raises(ProfileError):
        simulate_printscan(ImageBuffer(np.zeros((8, 8, 3), np.uint8)), {"name": "dict"})
