import pytest

from fgsa.config import ConfigError, RunConfig, dump_config, load_config, parse_config


def test_defaults_are_toy_settings():
    cfg = parse_config("")
    assert cfg.train.lr == 1e-3 and cfg.train.weight_decay == 0.05 and cfg.train.batch == 2
    assert cfg.backbone.depth == 8 and cfg.backbone.group_count == 4 and cfg.adapter.d == 1


def test_dump_parse_round_trip(tmp_path):
    cfg = parse_config("[train]\nlr = 0.002\n[adapter]\nd = 2\n[data]\nn_train = 5\ncontrast = 0.05\n",
                       base_dir=tmp_path)
    again = parse_config(dump_config(cfg), base_dir=tmp_path)
    assert again == cfg
    assert again.data.synth.n_train == 5 and again.data.synth.contrast_delta == 0.05


@pytest.mark.parametrize("text,match", [
    ("[train]\nbogus = 1\n", "unknown key"),
    ("[backbone]\ngroup_count = 3\n", "depth"),
    ("[data]\nroot = /does/not/exist\n", "does not exist"),
    ("[backbone]\nimage_size = 32\npatch_size = 4\n[data]\nsize = 64\n", "synthetic size"),
    ("[train]\nlr = -1\n", "invalid"),
    ("not ini", "unparseable"),
])
def test_validation_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "data").mkdir()
    p = tmp_path / "run.ini"
    p.write_text("[data]\nroot = data\n[out]\ndir = out\n")
    cfg = load_config(p)
    assert cfg.data.root == str(tmp_path / "data") and cfg.out_dir == str(tmp_path / "out")
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini")


def test_with_values():
    cfg = RunConfig().with_values("train", max_steps=7)
    assert cfg.train.max_steps == 7 and RunConfig().train.max_steps == 0
