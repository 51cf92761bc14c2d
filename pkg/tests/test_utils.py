import logging

import numpy as np
import pytest

from intermep import utils


def test_get_rng_from_seed_is_reproducible():
    a = utils.get_rng_from_seed(7).normal(size=5)
    b = utils.get_rng_from_seed(7).normal(size=5)
    assert np.array_equal(a, b)


def test_get_rng_from_seed_sequence():
    """
    (seed, epoch) pairs give independent but reproducible streams.

    """
    a = utils.get_rng_from_seed((0, 1)).random(4)
    b = utils.get_rng_from_seed((0, 1)).random(4)
    c = utils.get_rng_from_seed((0, 2)).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_get_rng_from_seed_none():
    assert isinstance(utils.get_rng_from_seed(None), np.random.Generator)


@pytest.mark.parametrize("seed", ["7", 1.5, True, (1, "a")])
def test_get_rng_from_seed_invalid(seed):
    with pytest.raises(ValueError):
        utils.get_rng_from_seed(seed)


def test_parse_int_list():
    assert utils.parse_int_list("8, 16,32") == (8, 16, 32)
    assert utils.parse_int_list([1, 2]) == (1, 2)
    assert utils.parse_int_list("") == ()


def test_parse_int_list_invalid():
    with pytest.raises(ValueError, match="integers"):
        utils.parse_int_list("8,x")


def test_parse_name_list():
    assert utils.parse_name_list("k, v,o") == ("k", "v", "o")
    assert utils.parse_name_list(["q"]) == ("q",)


def test_config_error_lists_every_problem():
    err = utils.ConfigError(["a is bad", "b is bad"])
    assert err.problems == ["a is bad", "b is bad"]
    assert str(err) == "invalid configuration: a is bad; b is bad"
    assert isinstance(err, ValueError)


def test_config_error_from_string():
    assert utils.ConfigError("only one").problems == ["only one"]


def test_configure_logging_levels():
    utils.configure_logging(verbose=True)
    assert logging.getLogger().level == logging.DEBUG
    utils.configure_logging()
    assert logging.getLogger().level == logging.INFO


def test_vprint(capsys):
    utils.vprint("shown")
    utils.vprint("hidden", verbose=False)
    assert capsys.readouterr().out == "shown\n"
