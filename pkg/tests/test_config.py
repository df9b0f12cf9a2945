import pytest

from laseg.config import ConfigError, PipelineConfig, config_hash, config_text, load_config, parse_config


def test_defaults_and_overrides():
    cfg = parse_config("""
[run]
seed = 7
selection = both
leave_one_out = yes

[registration]
pyramid = 2:2, 1:1
affine_iters = 10

[levelset]
mu = auto
n_iters = 5

[phantom]
dims = 16 16 16
""", check_paths=False)
    assert cfg.seed == 7 and cfg.registration.seed == 7
    assert cfg.modes == ("simple", "random")
    assert cfg.leave_one_out
    assert cfg.registration.pyramid == ((2.0, 2), (1.0, 1))
    assert cfg.registration.affine_iters == 10
    assert cfg.levelset.mu is None and cfg.levelset.n_iters == 5
    assert cfg.phantom.dims == (16, 16, 16)
    assert cfg.clic == PipelineConfig().clic


def test_registration_seed_can_differ():
    cfg = parse_config("[run]\nseed = 3\n[registration]\nseed = 11\n", check_paths=False)
    assert cfg.seed == 3 and cfg.registration.seed == 11


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[clic]\nn_clusters = 3\n",
    "[clic]\nn_classes = 1\n",
    "[run]\nselection = best\n",
    "[run]\nleave_one_out = maybe\n",
    "[registration]\npyramid = 4\n",
    "[simple]\nmin_alive = 5\nfinal_count = 3\n",
    "not a config",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text, check_paths=False)


def test_paths_must_exist(tmp_path):
    (tmp_path / "c.ini").write_text("[paths]\natlas_image_dir = missing\n")
    with pytest.raises(ConfigError, match="missing"):
        load_config(tmp_path / "c.ini")
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_config_text_round_trips_and_hash_is_stable():
    cfg = parse_config("[run]\nseed = 5\n[clic]\nfuzzifier = 2.5\n", check_paths=False)
    again = parse_config(config_text(cfg), check_paths=False)
    assert config_text(again) == config_text(cfg)
    assert config_hash(again) == config_hash(cfg)
    assert config_hash(cfg.with_seed(6)) != config_hash(cfg)
