import pytest

from psforensics.config import (ConfigFileError, format_profile, load_config, parse_config)
from psforensics.manipulations import Manipulation
from psforensics.printscan import ProfileError


def test_packaged_config_loads():
    cfg = load_config()
    assert cfg.manipulations[Manipulation.GB].params["sigma"] == 1.1
    assert cfg.dataset.block_size == 64
    assert cfg.dataset.jpeg_attack_quality == 80
    assert [p.name for p in cfg.profiles] == ["sim-dell", "sim-xerox1", "sim-xerox2"]


def test_family_overrides():
    cfg = load_config()
    base, bayar = cfg.train_config(), cfg.train_config("bayar2016")
    assert base.schedule == "polynomial" and bayar.schedule == "step"
    assert bayar.momentum == 0.95 and base.momentum == 0.9
    assert cfg.train_config(epochs=3).epochs == 3


@pytest.mark.parametrize("profile", load_config().profiles, ids=lambda p: p.name)
def test_profile_round_trip(profile):
    again = parse_config(format_profile(profile)).profiles[0]
    assert again == profile


def test_clip_norm_off():
    cfg = parse_config("[train]\nclip_norm = off\nmax_iter = none\n")
    tc = cfg.train_config()
    assert tc.clip_norm is None and tc.max_iter is None


@pytest.mark.parametrize("text", [
    "[train]\nbogus = 1\n",
    "[dataset]\nbogus = 1\n",
    "[profile:x]\ncolor_matrix = 1, 0, 0\n",
    "[profile:x]\nwhatever = 1\n",
    "[profile:x]\nblur_sigma = -1\n",
])
def test_bad_config(text):
    with pytest.raises(ConfigFileError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.ini")


def test_unknown_profile():
    with pytest.raises(KeyError):
        load_config().profile("sim-canon")
