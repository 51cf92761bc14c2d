import pytest

from intermep.config import CONFIG_ENV, RunConfig, resolve_config
from intermep.utils import ConfigError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("top_n: 1\nlr: 5.0e-3\nlora_targets: [q, v]\n")
    return str(path)


def test_defaults():
    assert resolve_config(environ={}) == RunConfig()
    assert RunConfig().validate() == []


def test_layer_precedence(config_file):
    environ = {"INTERCLIP_MEP_TOP_N": "3"}
    assert resolve_config(config_file, environ={}).top_n == 1
    assert resolve_config(config_file, environ=environ).top_n == 3
    assert resolve_config(config_file, {"top_n": 2}, environ=environ).top_n == 2
    # unset flags do not mask lower layers
    assert resolve_config(config_file, {"top_n": None}, environ=environ).top_n == 3


def test_file_values_are_coerced(config_file):
    config = resolve_config(config_file, environ={})
    assert config.lr == 5e-3
    assert config.lora_targets == ("q", "v")


def test_config_path_from_environment(config_file):
    assert resolve_config(environ={CONFIG_ENV: config_file}).top_n == 1


def test_preset_sits_below_the_file(config_file):
    config = resolve_config(config_file, {"preset": "paper"}, environ={})
    assert config.d_t == 512
    assert config.top_n == 1


def test_environment_strings():
    environ = {"INTERCLIP_MEP_MEP": "off", "INTERCLIP_MEP_FRACTIONS": "0.5,0.25,0.25",
               "INTERCLIP_MEP_LORA_ALPHA": "8", "INTERCLIP_MEP_INTERACTION_MODE": "tw"}
    config = resolve_config(environ=environ)
    assert config.mep is False
    assert config.fractions == (0.5, 0.25, 0.25)
    assert config.lora_alpha == 8.0
    assert config.interaction_mode == "tw"


def test_problems_from_every_layer_are_listed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"bogus": 1}')
    with pytest.raises(ConfigError) as err:
        resolve_config(str(path), {"seed": "x"}, environ={"INTERCLIP_MEP_MEP": "maybe"})
    problems = err.value.problems
    assert "config file: unknown key 'bogus'" in problems
    assert any(p.startswith("environment: mep") for p in problems)
    assert any(p.startswith("flags: seed") for p in problems)


def test_invalid_values_fail_validation():
    with pytest.raises(ConfigError) as err:
        resolve_config(overrides={"memory_size": 0, "top_n": 9}, environ={})
    assert any("memory_size" in p for p in err.value.problems)
    assert any("top_n" in p for p in err.value.problems)


def test_empty_dataset_is_a_config_error():
    with pytest.raises(ConfigError, match="empty dataset"):
        resolve_config(overrides={"n": 0}, environ={})


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config file"):
        resolve_config(str(tmp_path / "nope.yaml"), environ={})


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        resolve_config(overrides={"preset": "huge"}, environ={})


def test_round_trip():
    config = RunConfig(top_n=1, sweep=(4, 8), lora_targets=("q",))
    assert RunConfig.from_dict(config.to_dict()) == config


def test_derived_configs():
    config = RunConfig(adam_eps=1e-6, seed=4, n=10, image_side=16, patch_size=4)
    assert config.train_config().eps == 1e-6
    assert config.train_config().seed == 4
    assert config.model_config().image_side == 16
    assert config.synth_spec().n_samples == 10
