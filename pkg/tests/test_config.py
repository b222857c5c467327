import pytest

from ostr.config import DEFAULTS, FULL_SCALE_PRESET, VARIANTS, RunConfig, apply_variant
from ostr.errors import InvalidArgument


def test_text_round_trip():
    cfg = RunConfig({"seed": "3", "loss.gamma": "2.5", "preprocess.rotation": "off"})
    assert cfg["seed"] == 3 and cfg["loss.gamma"] == 2.5 and cfg["preprocess.rotation"] is False
    again = RunConfig.from_text(cfg.to_text())
    assert again.values == cfg.values and again.digest() == cfg.digest()


def test_comments_and_errors(tmp_path):
    (tmp_path / "c.cfg").write_text("# desk run\n\nseed = 11\n", encoding="utf-8")
    assert RunConfig.from_file(tmp_path / "c.cfg")["seed"] == 11
    with pytest.raises(InvalidArgument):
        RunConfig({"nope": 1})
    with pytest.raises(InvalidArgument):
        RunConfig({"seed": "x"})
    with pytest.raises(InvalidArgument):
        RunConfig({"preprocess.rotation": "maybe"})
    with pytest.raises(InvalidArgument):
        RunConfig.from_text("seed 3")


def test_typed_views_follow_values():
    cfg = RunConfig({"model.base_channels": 8, "preprocess.canonical_width": 64, "model.deconv_channels": "4,4,4,4"})
    m = cfg.model_config()
    assert m.encoder.out_channels == 32 and m.encoder.width == 64 and m.cirn.deconv_channels == (4, 4, 4, 4)
    assert cfg.preprocess_config().canonical_width == 64
    w = cfg.loss_weights()
    assert (w.alpha, w.beta, w.gamma) == (1.0, 1.0, 5.0)


def test_full_scale_preset_keys_exist():
    assert set(FULL_SCALE_PRESET) <= set(DEFAULTS)
    assert RunConfig(FULL_SCALE_PRESET)["train.batch_size"] == 64


@pytest.mark.parametrize("name", list(VARIANTS))
def test_variants_switch_terms(name):
    cfg = apply_variant(RunConfig(), name)
    rotation, lc, lo, lr = VARIANTS[name]
    assert cfg["preprocess.rotation"] is rotation
    assert (cfg["loss.beta"] > 0, cfg["loss.alpha"] > 0, cfg["loss.gamma"] > 0) == (lc, lo, lr)
    with pytest.raises(InvalidArgument):
        apply_variant(RunConfig(), "bogus")
