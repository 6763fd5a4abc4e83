import pytest

from d2former.config import ConfigError, RunConfig, format_config, load_config, parse_config
from d2former.model import D2FormerConfig


def test_defaults_round_trip():
    cfg = RunConfig()
    again = parse_config(format_config(cfg))
    assert again == cfg


def test_overrides_and_types():
    cfg = parse_config("""
        # comment
        model.C = 16
        model.dilations = 1, 2
        loss.gamma1 = 0.5   # trailing comment
        data.mode = paired
        train.clip_norm = 0
    """)
    assert cfg.model.C == 16 and cfg.model.dilations == (1, 2)
    assert cfg.loss.gamma1 == 0.5 and cfg.data.mode == "paired" and cfg.train.clip_norm == 0.0


def test_toy_switch_keeps_model_overrides():
    cfg = parse_config("toy = true\nmodel.N = 2\n")
    assert cfg.toy and cfg.model == D2FormerConfig.toy(N=2)
    assert parse_config("toy = yes").model == D2FormerConfig.toy()


@pytest.mark.parametrize("line", ["model.bogus = 1", "optim.lr = 1", "model = 3", "gamma1 = 0.2"])
def test_unknown_key_named(line):
    key = line.split("=")[0].strip()
    with pytest.raises(ConfigError, match=f"unknown config key: {key}"):
        parse_config(line)


@pytest.mark.parametrize("text", ["model.C = four", "toy = maybe", "just words", "loss.gamma1 = -1",
                                  "model.F = 200"])
def test_bad_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_missing(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.cfg"):
        load_config(tmp_path / "nope.cfg")
    p = tmp_path / "ok.cfg"
    p.write_text("train.lr = 0.001\n")
    assert load_config(p).train.lr == 0.001
