"""RunConfig defaults, overrides, and the key=value file format."""
import pytest

from placekit.config import (RunConfig, config_fingerprint, load_config,
                             save_config)
from placekit.errors import InputError


def test_every_field_has_a_default():
    cfg = RunConfig()
    assert cfg.lam == 3.0
    assert cfg.anchor_scales == ((8, 8), (4, 4))
    assert cfg.thresholds() == (0.5, 0.5, 0.5)


def test_override_returns_new_frozen_config():
    cfg = RunConfig()
    other = cfg.override(lam=1.0, seed=7)
    assert other.lam == 1.0 and other.seed == 7
    assert cfg.lam == 3.0
    with pytest.raises(Exception):
        cfg.lam = 2.0


def test_round_trip(tmp_path):
    cfg = RunConfig().override(lam=2.5, anchor_scales=((16, 16), (8, 8)),
                               loss_kind="iou", epochs_placement=3)
    path = tmp_path / "run.cfg"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_fingerprint_tracks_content():
    a, b = RunConfig(), RunConfig().override(seed=43)
    assert config_fingerprint(a) == config_fingerprint(RunConfig())
    assert config_fingerprint(a) != config_fingerprint(b)


def test_load_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("not_a_field=3\n")
    with pytest.raises(InputError):
        load_config(path)


def test_load_rejects_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("lam 3.0\n")
    with pytest.raises(InputError):
        load_config(path)


def test_comments_and_blanks_ignored(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("# a comment\n\nlam=1.5\n")
    assert load_config(path).lam == 1.5
