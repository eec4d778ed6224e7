import pytest

from xenad import config


def test_round_trip_defaults():
    cfg = config.loads("", env={})
    assert config.loads(config.dumps(cfg), env={}) == cfg


def test_round_trip_changed_values():
    cfg = config.loads("", env={})
    cfg = cfg.replace("behavior", hidden=32, box_encoder_mlp=(16, 8), motion_input=False, fps=12.5)
    cfg = cfg.replace("eval", tau=0.25).replace("fusion", mode="deferred")
    assert config.loads(config.dumps(cfg), env={}) == cfg


def test_partial_file_keeps_defaults():
    cfg = config.loads("[interaction]\nepochs = 3\nencoder_mlp = 8, 4\n", env={})
    assert cfg.interaction.epochs == 3 and cfg.interaction.encoder_mlp == (8, 4)
    assert cfg.interaction.hidden == 128 and cfg.behavior.delta == 10


def test_unknown_key_rejected():
    with pytest.raises(config.ConfigError, match="unknown keys"):
        config.loads("[behavior]\nhiden = 3\n", env={})


def test_unknown_section_rejected():
    with pytest.raises(config.ConfigError, match="unknown sections"):
        config.loads("[model]\nx = 1\n", env={})


def test_bad_values():
    with pytest.raises(config.ConfigError, match="cannot parse"):
        config.loads("[run]\nseed = abc\n", env={})
    with pytest.raises(config.ConfigError, match="cannot parse"):
        config.loads("[behavior]\nmotion_input = maybe\n", env={})
    with pytest.raises(config.ConfigError, match="mode"):
        config.loads("[fusion]\nmode = later\n", env={})
    with pytest.raises(config.ConfigError):
        config.loads("[interaction]\ndecoder_out_mlp = 4, 6\n", env={})


def test_env_overrides_paths():
    cfg = config.loads("[paths]\ndata_dir = a\n", env={"XENAD_DATA_DIR": "/tmp/x", "XENAD_REPORT_DIR": ""})
    assert cfg.paths.data_dir == "/tmp/x"
    assert cfg.paths.report_dir == "run/report"


def test_shipped_default_file_loads():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "default.ini"
    assert config.load(path, env={}) == config.loads("", env={})


def test_missing_file():
    with pytest.raises(config.ConfigError, match="cannot read"):
        config.load("/nonexistent/run.ini")
