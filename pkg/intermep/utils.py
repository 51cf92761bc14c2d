"""
UTILS
-----
A collection of various functions that do not fit elsewhere.

"""

__all__ = [
    'ConfigError',
    'configure_logging',
    'get_rng_from_seed',
    'parse_int_list',
    'parse_name_list',
    'vprint',
    ]

import logging
import sys

import numpy as np


LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


class ConfigError(ValueError):
    """
    Raised when a configuration fails validation.

    Attributes
    ----------
    problems : list of str
        Every problem found, not just the first.

    """
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


def get_rng_from_seed(seed):
    """
    Parameters
    ----------
    seed : None, int or sequence of int
        The random seed that will be used to generate the numpy
        default_rng(). A sequence such as (seed, epoch) derives an
        independent stream per entry. If None, a random seed will
        be used.
        Default: None

    Returns
    -------
    rng : np.random.Generator

    """
    if seed is None:
        rng = np.random.default_rng()
    elif isinstance(seed, (int, np.integer)) and not isinstance(seed, bool):
        rng = np.random.default_rng(seed=int(seed))
    elif isinstance(seed, (tuple, list)) and all(isinstance(s, (int, np.integer)) for s in seed):
        rng = np.random.default_rng(seed=[int(s) for s in seed])
    else:
        raise ValueError("Seed must be of type int or a sequence of int")
    return rng


def parse_int_list(text):
    """
    Parses a comma separated list of integers, e.g. "8,16,32".

    Returns
    -------
    values : tuple of int

    """
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    items = [item.strip() for item in str(text).split(",") if item.strip()]
    try:
        return tuple(int(item) for item in items)
    except ValueError:
        msg = f"expected a comma separated list of integers, got {text!r}"
        raise ValueError(msg) from None


def parse_name_list(text):
    """
    Parses a comma separated list of names, e.g. "k,v,o".

    Returns
    -------
    names : tuple of str

    """
    if isinstance(text, (list, tuple)):
        return tuple(str(v).strip() for v in text)
    return tuple(item.strip() for item in str(text).split(",") if item.strip())


def configure_logging(verbose=False):
    """
    Sets up the root logger for command line use.

    Parameters
    ----------
    verbose : bool, optional
        Log at DEBUG level instead of INFO.
        Default: False

    """
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def vprint(*args, verbose=True, **kwargs):
    """
    Behaves exactly the same as the regular print function except
    with the additional 'verbose' keyword.

    Setting `verbose = False` will skip the print statement entirely.

    """
    if verbose:
        print(*args, **kwargs)
