import pytest

from s3pet.config import DEFAULTS, Config, parse_config, parse_config_text
from s3pet.errors import ConfigError


def test_empty_gives_defaults(tmp_path):
    (tmp_path / "c.cfg").write_text("")
    cfg = parse_config(tmp_path / "c.cfg")
    assert cfg["loss.lambda2"] == 5.0
    assert cfg["train.batch_size"] == 32 and cfg["train.lr"] == 2e-4 and cfg["model.T"] == 4
    assert cfg["loss.gamma"] == 1.0 and cfg["loss.lambda1"] == 1.0
    assert parse_config(None).values == cfg.values


def test_override_and_comments():
    cfg = parse_config_text("# comment\nloss.gamma = 2\n\n  model.d=32\nloss.gamma = 3\n")
    assert cfg["loss.gamma"] == 3.0 and cfg["model.d"] == 32


def test_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("loss.gamma = 1\nmodel.T = abc\n")
    with pytest.raises(ConfigError, match="line 1.*unknown"):
        parse_config_text("model.nope = 1\n")
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("\n\njust text\n")
    with pytest.raises(ConfigError):
        parse_config_text("model.d = 1.5\n")


def test_typed_views():
    cfg = parse_config_text("data.levels = 0.2, 0.4\nmodel.keep_l = 0.1\ntrain.stage2_max_steps = 7\n")
    assert cfg.phantom_spec().intensity_levels == (0.2, 0.4)
    assert cfg.model_config().keep_l == 0.1
    assert cfg.train_config("II").max_steps == 7
    assert cfg.train_config("I").max_steps == DEFAULTS["train.stage1_max_steps"][0]
    assert cfg.loss_weights().lambda2 == 5.0
    assert cfg.dose_params().drf == 100.0
    assert cfg.split_config().n_paired_eval == 2
    with pytest.raises(ConfigError):
        parse_config_text("data.levels = a,b\n").phantom_spec()


def test_text_round_trip():
    cfg = parse_config_text("loss.gamma = 2.5\n")
    assert parse_config_text(cfg.text()).values == cfg.values


def test_every_default_has_help():
    assert all(isinstance(h, str) and h for _, h in DEFAULTS.values())
    assert {k.split(".")[0] for k in DEFAULTS} == {"data", "model", "train", "loss", "eval"}
    assert Config().values == {k: v for k, (v, _) in DEFAULTS.items()}
